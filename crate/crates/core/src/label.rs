use crate::error::{shape_err, Error, Result};

/// A 2-D grid of class indices, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return shape_err(format!(
                "label map {height}×{width} needs {} entries, got {}",
                height * width,
                data.len()
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, class: u8) -> Self {
        Self {
            height,
            width,
            data: vec![class; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, class: u8) {
        self.data[y * self.width + x] = class;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn count(&self, class: u8) -> usize {
        self.data.iter().filter(|&&c| c == class).count()
    }

    pub fn check_range(&self, classes: usize) -> Result<()> {
        match self.data.iter().find(|&&c| c as usize >= classes) {
            Some(&label) => Err(Error::LabelOutOfRange { label, classes }),
            None => Ok(()),
        }
    }
}

/// Checks that a label batch matches `[N, H, W]` and every label is below `classes`.
pub(crate) fn check_batch(labels: &[LabelMap], n: usize, h: usize, w: usize, classes: usize) -> Result<()> {
    if labels.len() != n {
        return shape_err(format!("{} label maps for a batch of {n}", labels.len()));
    }
    for l in labels {
        if (l.height, l.width) != (h, w) {
            return shape_err(format!(
                "label map {}×{} does not match {h}×{w}",
                l.height, l.width
            ));
        }
        l.check_range(classes)?;
    }
    Ok(())
}
