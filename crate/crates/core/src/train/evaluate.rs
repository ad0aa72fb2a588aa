use crate::data::Sample;
use crate::error::Result;
use crate::metrics::{confusion, Metrics, MetricReport, THRESHOLD};
use crate::model::CascnModel;
use crate::par;
use crate::tensor::Tensor;

/// Anything that maps `1×3×H×W` images to `1×1×H×W` probabilities.
pub trait Predictor: Sync {
    fn predict(&self, image: &Tensor) -> Result<Tensor>;
}

impl Predictor for CascnModel {
    fn predict(&self, image: &Tensor) -> Result<Tensor> {
        CascnModel::predict(self, image)
    }
}

impl<F> Predictor for F
where
    F: Fn(&Tensor) -> Result<Tensor> + Sync,
{
    fn predict(&self, image: &Tensor) -> Result<Tensor> {
        self(image)
    }
}

/// Per-image scores against the stored masks; images are independent and
/// evaluated in parallel, rows keep dataset order.
pub fn evaluate(predictor: &dyn Predictor, samples: &[Sample]) -> Result<MetricReport> {
    let rows = par::map_indexed(samples.len(), |i| -> Result<(String, Metrics)> {
        let s = &samples[i];
        let p = predictor.predict(&s.image_tensor())?;
        let gt = s.mask_tensor();
        let c = confusion(p.data(), gt.data(), THRESHOLD)?;
        Ok((s.id.clone(), Metrics::from_counts(&c)))
    });
    Ok(MetricReport {
        rows: rows.into_iter().collect::<Result<_>>()?,
    })
}
