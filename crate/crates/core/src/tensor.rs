//! Dense value types shared across the engine.

use crate::error::{Error, Result};

/// One image's feature map, `C × H × W`, stored channel-major then row-major.
///
/// `layer_boundaries` holds the first channel of every source layer that was
/// concatenated into this tensor (always starts at 0).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    data: Vec<f32>,
    channels: usize,
    height: usize,
    width: usize,
    layer_boundaries: Vec<u32>,
    source_resolution: (usize, usize),
}

impl FeatureTensor {
    /// Builds a single-layer tensor whose source resolution equals its grid.
    pub fn new(data: Vec<f32>, channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::with_layers(data, channels, height, width, vec![0])
    }

    pub fn with_layers(
        data: Vec<f32>,
        channels: usize,
        height: usize,
        width: usize,
        layer_boundaries: Vec<u32>,
    ) -> Result<Self> {
        let dims = [channels, height, width];
        if dims.contains(&0) {
            return Err(Error::ZeroDim(dims));
        }
        let expected = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or(Error::DimOverflow(usize::MAX))?;
        if data.len() != expected {
            return Err(Error::BufferMismatch {
                len: data.len(),
                dims,
            });
        }
        validate_boundaries(&layer_boundaries, channels)?;
        Ok(Self {
            data,
            channels,
            height,
            width,
            layer_boundaries,
            source_resolution: (height, width),
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(vec![0.0; channels * height * width], channels, height, width)
    }

    /// Replaces the recorded input-image resolution (feature files do not carry it).
    pub fn with_source_resolution(mut self, height: usize, width: usize) -> Self {
        self.source_resolution = (height, width);
        self
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn locations(&self) -> usize {
        self.height * self.width
    }

    pub fn layer_boundaries(&self) -> &[u32] {
        &self.layer_boundaries
    }

    pub fn source_resolution(&self) -> (usize, usize) {
        self.source_resolution
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, channel: usize) -> &[f32] {
        let hw = self.locations();
        &self.data[channel * hw..(channel + 1) * hw]
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.data[(channel * self.height + row) * self.width + col]
    }

    /// Copies the channel vector at flat location `loc` (= row·W + col) into `out`.
    pub fn location_vector_into(&self, loc: usize, out: &mut [f32]) {
        let hw = self.locations();
        for (c, slot) in out.iter_mut().enumerate().take(self.channels) {
            *slot = self.data[c * hw + loc];
        }
    }

    pub fn location_vector(&self, loc: usize) -> Vec<f32> {
        let mut v = vec![0.0; self.channels];
        self.location_vector_into(loc, &mut v);
        v
    }
}

pub(crate) fn validate_boundaries(boundaries: &[u32], channels: usize) -> Result<()> {
    let ok = boundaries.first() == Some(&0)
        && boundaries.windows(2).all(|w| w[0] < w[1])
        && boundaries.iter().all(|&b| (b as usize) < channels);
    if ok {
        Ok(())
    } else {
        Err(Error::NonMonotonicBoundaries(boundaries.to_vec()))
    }
}

/// A single-channel `H × W` grid of scores, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    values: Vec<f32>,
    height: usize,
    width: usize,
}

impl Grid {
    pub fn new(values: Vec<f32>, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::ZeroDim([1, height, width]));
        }
        if values.len() != height * width {
            return Err(Error::BufferMismatch {
                len: values.len(),
                dims: [1, height, width],
            });
        }
        Ok(Self {
            values,
            height,
            width,
        })
    }

    pub fn filled(value: f32, height: usize, width: usize) -> Result<Self> {
        Self::new(vec![value; height * width], height, width)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn min(&self) -> f32 {
        self.values.iter().copied().fold(f32::INFINITY, f32::min)
    }
}
