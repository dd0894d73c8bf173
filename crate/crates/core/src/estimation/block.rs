use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{Jacobian, StateVector, STATE_DIM};
use crate::error::{Error, Result};

/// Nonlinear output function `g(x)` together with its Jacobian.
pub trait MeasurementModel: Send + Sync {
    /// Number of scalar outputs.
    fn dim(&self) -> usize;

    fn predict(&self, x: &StateVector) -> Result<DVector<f64>>;

    fn jacobian(&self, x: &StateVector) -> Result<Jacobian>;
}

/// Affine output `g(x) = H x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub matrix: Jacobian,
    pub offset: DVector<f64>,
}

impl LinearModel {
    pub fn new(matrix: Jacobian) -> Self {
        let offset = DVector::zeros(matrix.nrows());
        Self { matrix, offset }
    }

    pub fn with_offset(matrix: Jacobian, offset: DVector<f64>) -> Result<Self> {
        if offset.len() != matrix.nrows() {
            return Err(Error::contract("offset length differs from matrix rows"));
        }
        Ok(Self { matrix, offset })
    }
}

impl MeasurementModel for LinearModel {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn predict(&self, x: &StateVector) -> Result<DVector<f64>> {
        Ok(&self.matrix * x + &self.offset)
    }

    fn jacobian(&self, _x: &StateVector) -> Result<Jacobian> {
        Ok(self.matrix.clone())
    }
}

type PredictFn = dyn Fn(&StateVector) -> Result<DVector<f64>> + Send + Sync;
type JacobianFn = dyn Fn(&StateVector) -> Result<Jacobian> + Send + Sync;

struct FnModel {
    dim: usize,
    predict: Box<PredictFn>,
    jacobian: Box<JacobianFn>,
}

impl MeasurementModel for FnModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, x: &StateVector) -> Result<DVector<f64>> {
        (self.predict)(x)
    }

    fn jacobian(&self, x: &StateVector) -> Result<Jacobian> {
        (self.jacobian)(x)
    }
}

struct StackedModel {
    parts: Vec<Arc<dyn MeasurementModel>>,
    dim: usize,
}

impl MeasurementModel for StackedModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, x: &StateVector) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.dim);
        let mut row = 0;
        for part in &self.parts {
            let y = part.predict(x)?;
            out.rows_mut(row, y.len()).copy_from(&y);
            row += y.len();
        }
        Ok(out)
    }

    fn jacobian(&self, x: &StateVector) -> Result<Jacobian> {
        let mut out = Jacobian::zeros(self.dim);
        let mut row = 0;
        for part in &self.parts {
            let g = part.jacobian(x)?;
            out.rows_mut(row, g.nrows()).copy_from(&g);
            row += g.nrows();
        }
        Ok(out)
    }
}

/// A group of measurements `z = g(x) + v`, `v ~ N(0, R)`, consumed by the IEKF.
#[derive(Clone)]
pub struct MeasurementBlock {
    pub label: String,
    pub values: DVector<f64>,
    pub covariance: DMatrix<f64>,
    model: Arc<dyn MeasurementModel>,
}

impl fmt::Debug for MeasurementBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MeasurementBlock")
            .field("label", &self.label)
            .field("values", &self.values)
            .field("covariance", &self.covariance)
            .finish_non_exhaustive()
    }
}

impl MeasurementBlock {
    pub fn new(
        label: impl Into<String>,
        values: DVector<f64>,
        covariance: DMatrix<f64>,
        model: Arc<dyn MeasurementModel>,
    ) -> Result<Self> {
        let m = values.len();
        if covariance.nrows() != m || covariance.ncols() != m {
            return Err(Error::contract(format!(
                "covariance is {}x{} for {} measurements",
                covariance.nrows(),
                covariance.ncols(),
                m
            )));
        }
        if model.dim() != m {
            return Err(Error::contract(format!(
                "model produces {} outputs for {} measurements",
                model.dim(),
                m
            )));
        }
        if values.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                field: "measurement block",
            });
        }
        let scale = covariance.amax().max(f64::MIN_POSITIVE);
        if m > 0 && (&covariance - covariance.transpose()).amax() > 1e-9 * scale {
            return Err(Error::contract("measurement covariance is not symmetric"));
        }
        Ok(Self {
            label: label.into(),
            values,
            covariance,
            model,
        })
    }

    pub fn from_fns<P, J>(
        label: impl Into<String>,
        values: DVector<f64>,
        covariance: DMatrix<f64>,
        predict: P,
        jacobian: J,
    ) -> Result<Self>
    where
        P: Fn(&StateVector) -> Result<DVector<f64>> + Send + Sync + 'static,
        J: Fn(&StateVector) -> Result<Jacobian> + Send + Sync + 'static,
    {
        let model = FnModel {
            dim: values.len(),
            predict: Box::new(predict),
            jacobian: Box::new(jacobian),
        };
        Self::new(label, values, covariance, Arc::new(model))
    }

    pub fn linear(
        label: impl Into<String>,
        values: DVector<f64>,
        covariance: DMatrix<f64>,
        model: LinearModel,
    ) -> Result<Self> {
        Self::new(label, values, covariance, Arc::new(model))
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn model(&self) -> &Arc<dyn MeasurementModel> {
        &self.model
    }

    pub fn predict(&self, x: &StateVector) -> Result<DVector<f64>> {
        let y = self.model.predict(x)?;
        if y.len() != self.dim() {
            return Err(Error::contract(format!(
                "block '{}' predictor returned {} values, expected {}",
                self.label,
                y.len(),
                self.dim()
            )));
        }
        Ok(y)
    }

    pub fn jacobian(&self, x: &StateVector) -> Result<Jacobian> {
        let g = self.model.jacobian(x)?;
        if g.nrows() != self.dim() || g.ncols() != STATE_DIM {
            return Err(Error::contract(format!(
                "block '{}' jacobian is {}x{}, expected {}x{}",
                self.label,
                g.nrows(),
                g.ncols(),
                self.dim(),
                STATE_DIM
            )));
        }
        Ok(g)
    }
}

/// Concatenates blocks into one with a block-diagonal covariance.
pub fn stack_blocks(blocks: &[MeasurementBlock]) -> Result<MeasurementBlock> {
    match blocks {
        [] => Err(Error::contract("cannot stack an empty list of blocks")),
        [single] => Ok(single.clone()),
        _ => {
            let dim: usize = blocks.iter().map(MeasurementBlock::dim).sum();
            let mut values = DVector::zeros(dim);
            let mut covariance = DMatrix::zeros(dim, dim);
            let mut row = 0;
            for b in blocks {
                let m = b.dim();
                values.rows_mut(row, m).copy_from(&b.values);
                covariance.view_mut((row, row), (m, m)).copy_from(&b.covariance);
                row += m;
            }
            let label = blocks
                .iter()
                .map(|b| b.label.as_str())
                .collect::<Vec<_>>()
                .join("+");
            let model = StackedModel {
                parts: blocks.iter().map(|b| Arc::clone(&b.model)).collect(),
                dim,
            };
            MeasurementBlock::new(label, values, covariance, Arc::new(model))
        }
    }
}
