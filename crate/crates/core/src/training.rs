//! Full-batch function fitting with MSE loss and Adam.

use std::fmt::Write as _;
use std::path::Path;

use crate::adam::AdamState;
use crate::error::{Error, Result};
use crate::network::{Network, ParamVector};

/// Paired input/target rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::Shape {
                context: "dataset rows",
                expected: inputs.len(),
                got: targets.len(),
            });
        }
        check_matrix(&inputs, "dataset inputs")?;
        check_matrix(&targets, "dataset targets")?;
        Ok(Dataset { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn output_dim(&self) -> usize {
        self.targets.first().map_or(0, Vec::len)
    }

    /// CSV with header `x1,..,xD,z1,..,zK`.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let header: Vec<String> = (1..=self.input_dim())
            .map(|i| format!("x{i}"))
            .chain((1..=self.output_dim()).map(|i| format!("z{i}")))
            .collect();
        s.push_str(&header.join(","));
        s.push('\n');
        for (x, z) in self.inputs.iter().zip(&self.targets) {
            let row: Vec<String> = x.iter().chain(z).map(|v| format!("{v:.16e}")).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

fn check_matrix(rows: &[Vec<f64>], context: &'static str) -> Result<()> {
    let Some(first) = rows.first() else {
        return Ok(());
    };
    for r in rows {
        if r.len() != first.len() {
            return Err(Error::Shape {
                context,
                expected: first.len(),
                got: r.len(),
            });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("{context} contain non-finite values")));
        }
    }
    Ok(())
}

/// Mean over all entries of the squared difference.
pub fn mse(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Shape {
            context: "mse rows",
            expected: target.len(),
            got: pred.len(),
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, t) in pred.iter().zip(target) {
        if p.len() != t.len() {
            return Err(Error::Shape {
                context: "mse columns",
                expected: t.len(),
                got: p.len(),
            });
        }
        for (a, b) in p.iter().zip(t) {
            sum += (a - b) * (a - b);
        }
        count += p.len();
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Column-wise MSE.
pub fn mse_per_output(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<Vec<f64>> {
    let d = target.first().map_or(0, Vec::len);
    let mut out = vec![0.0; d];
    for (p, t) in pred.iter().zip(target) {
        if p.len() != d || t.len() != d {
            return Err(Error::Shape {
                context: "mse columns",
                expected: d,
                got: p.len(),
            });
        }
        for (o, (a, b)) in out.iter_mut().zip(p.iter().zip(t)) {
            *o += (a - b) * (a - b);
        }
    }
    let n = pred.len().max(1) as f64;
    out.iter_mut().for_each(|v| *v /= n);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub test_mse: f64,
    pub train_per_output: Vec<f64>,
    pub test_per_output: Vec<f64>,
}

/// Loss history; epoch 0 is the untrained network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossTrace {
    pub records: Vec<EpochRecord>,
}

impl LossTrace {
    pub fn push(&mut self, rec: EpochRecord) {
        debug_assert!(self.records.last().is_none_or(|r| r.epoch < rec.epoch));
        self.records.push(rec);
    }

    pub fn first(&self) -> Option<&EpochRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `epoch,train_mse,test_mse,out1_train,..,outK_train,out1_test,..,outK_test`.
    pub fn to_csv(&self) -> String {
        let d = self
            .records
            .first()
            .map_or(0, |r| r.train_per_output.len());
        let mut s = String::from("epoch,train_mse,test_mse");
        for i in 1..=d {
            let _ = write!(s, ",out{i}_train");
        }
        for i in 1..=d {
            let _ = write!(s, ",out{i}_test");
        }
        s.push('\n');
        for r in &self.records {
            let _ = write!(s, "{},{:e},{:e}", r.epoch, r.train_mse, r.test_mse);
            for v in r.train_per_output.iter().chain(&r.test_per_output) {
                let _ = write!(s, ",{v:e}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

fn predict(net: &Network, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    data.inputs.iter().map(|x| net.eval(x)).collect()
}

/// Full-batch loss and gradient over a dataset.
pub fn regression_loss_and_grad(net: &Network, data: &Dataset) -> Result<(f64, ParamVector, Vec<Vec<f64>>)> {
    let mut grad = ParamVector::zeros(net.total_parameters());
    let mut preds = Vec::with_capacity(data.len());
    let scale = 1.0 / (data.len() * data.output_dim()).max(1) as f64;
    let mut loss = 0.0;
    for (x, t) in data.inputs.iter().zip(&data.targets) {
        let (z, cache) = net.forward(x)?;
        if z.len() != t.len() {
            return Err(Error::Shape {
                context: "network output vs target",
                expected: t.len(),
                got: z.len(),
            });
        }
        let zb: Vec<f64> = z
            .iter()
            .zip(t)
            .map(|(a, b)| {
                loss += (a - b) * (a - b);
                2.0 * (a - b) * scale
            })
            .collect();
        net.vjp_accumulate(&cache, &zb, &mut grad)?;
        preds.push(z);
    }
    Ok((loss * scale, grad, preds))
}

fn check_dims(net: &Network, data: &Dataset, what: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidArgument(format!("{what} dataset is empty")));
    }
    if data.input_dim() != net.n_in() || data.output_dim() != net.n_out() {
        return Err(Error::InvalidArgument(format!(
            "{what} dataset is {}->{} but network is {}->{}",
            data.input_dim(),
            data.output_dim(),
            net.n_in(),
            net.n_out()
        )));
    }
    Ok(())
}

/// Train with full-batch Adam, recording train/test MSE after every update.
pub fn train_regression(
    mut net: Network,
    train: &Dataset,
    test: &Dataset,
    epochs: usize,
    lr: f64,
) -> Result<(Network, LossTrace)> {
    check_dims(&net, train, "training")?;
    check_dims(&net, test, "test")?;
    let n_params = net.total_parameters();
    let mut adam = AdamState::new(n_params, lr);
    let mut params = net.flatten();
    let mut trace = LossTrace::default();

    for epoch in 0..=epochs {
        let (loss, grad, preds) = regression_loss_and_grad(&net, train)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                epoch,
                what: "training loss".into(),
            });
        }
        let test_preds = predict(&net, test)?;
        let test_mse = mse(&test_preds, &test.targets)?;
        trace.push(EpochRecord {
            epoch,
            train_mse: loss,
            test_mse,
            train_per_output: mse_per_output(&preds, &train.targets)?,
            test_per_output: mse_per_output(&test_preds, &test.targets)?,
        });
        if epoch == epochs {
            break;
        }
        adam.step(&mut params, &grad)?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite {
                epoch: epoch + 1,
                what: "parameters".into(),
            });
        }
        net.set_params(&params)?;
    }
    debug_assert_eq!(net.total_parameters(), n_params);
    Ok((net, trace))
}
