use crate::domain::QualityLabel;
use crate::error::{Error, Result};

/// Square or rectangular grayscale slice, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl SliceImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height * width != data.len() {
            return Err(Error::shape(format!(
                "{height}x{width} image needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(SliceImage {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        SliceImage {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }
}

/// Min-max normalization to [0, 1]. A constant image maps to all zeros.
pub fn minmax_normalize<V>(height: usize, width: usize, data: &[V]) -> Result<SliceImage>
where
    V: Copy + Into<f64>,
{
    if data.is_empty() || height * width == 0 {
        return Err(Error::invalid("cannot normalize an empty image"));
    }
    if height * width != data.len() {
        return Err(Error::shape(format!(
            "{height}x{width} image needs {} values, got {}",
            height * width,
            data.len()
        )));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in data {
        let v = v.into();
        if !v.is_finite() {
            return Err(Error::invalid("image contains non-finite intensities"));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let out = if hi > lo {
        let range = hi - lo;
        data.iter()
            .map(|&v| ((v.into() - lo) / range) as f32)
            .collect()
    } else {
        vec![0.0; data.len()]
    };
    SliceImage::new(height, width, out)
}

/// Centers `image` on a `size`x`size` zero canvas; an odd margin puts the
/// extra row/column at the bottom/right.
pub fn pad_to_size(image: &SliceImage, size: usize) -> Result<SliceImage> {
    if image.height > size || image.width > size {
        return Err(Error::invalid(format!(
            "{}x{} image does not fit a {size}x{size} canvas",
            image.height, image.width
        )));
    }
    if image.height == size && image.width == size {
        return Ok(image.clone());
    }
    let top = (size - image.height) / 2;
    let left = (size - image.width) / 2;
    let mut out = SliceImage::zeros(size, size);
    for r in 0..image.height {
        let src = &image.data[r * image.width..(r + 1) * image.width];
        let start = (top + r) * size + left;
        out.data[start..start + image.width].copy_from_slice(src);
    }
    Ok(out)
}

/// Ordered slices of one acquisition.
#[derive(Debug, Clone)]
pub struct VolumeStack {
    pub volume_id: String,
    slices: Vec<SliceImage>,
    slice_labels: Option<Vec<QualityLabel>>,
    pub volume_label: Option<QualityLabel>,
}

impl VolumeStack {
    pub fn new(
        volume_id: impl Into<String>,
        slices: Vec<SliceImage>,
        slice_labels: Option<Vec<QualityLabel>>,
        volume_label: Option<QualityLabel>,
    ) -> Result<Self> {
        if let Some(first) = slices.first() {
            if slices
                .iter()
                .any(|s| s.height != first.height || s.width != first.width)
            {
                return Err(Error::shape("slices of a volume must share dimensions"));
            }
        }
        if let Some(labels) = &slice_labels {
            if labels.len() != slices.len() {
                return Err(Error::shape(format!(
                    "{} slice labels for {} slices",
                    labels.len(),
                    slices.len()
                )));
            }
        }
        Ok(VolumeStack {
            volume_id: volume_id.into(),
            slices,
            slice_labels,
            volume_label,
        })
    }

    pub fn slices(&self) -> &[SliceImage] {
        &self.slices
    }

    pub fn slice_labels(&self) -> Option<&[QualityLabel]> {
        self.slice_labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }
}
