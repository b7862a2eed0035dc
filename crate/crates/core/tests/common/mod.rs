#![allow(dead_code)]

use menunet::dataset::Organization;
use menunet::features::{fit_name_projection, synth_embeddings, EmbeddingSource, FeatureContext};
use menunet::model::{
    backward_sequence, dropout_mask, forward_window, forward_window_nudged, init_params, input_jacobian, InputNudge,
    MenuInputs, ModelDims, ModelParams,
};
use menunet::numkit::RngStream;
use menunet::oracle::build_menu;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
/// Denominator floor for relative error on near-zero derivatives.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

pub fn tiny_dims() -> ModelDims {
    ModelDims {
        enc_cells: 4,
        pred_cells: 6,
        ..ModelDims::default()
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FdReport {
    pub params_checked: usize,
    pub inputs_checked: usize,
    pub max_param_rel: f64,
    pub max_input_rel: f64,
}

impl FdReport {
    pub fn passes(&self) -> bool {
        self.max_param_rel <= FD_TOL && self.max_input_rel <= FD_TOL
    }

    pub fn merge(&mut self, o: &FdReport) {
        self.params_checked += o.params_checked;
        self.inputs_checked += o.inputs_checked;
        self.max_param_rel = self.max_param_rel.max(o.max_param_rel);
        self.max_input_rel = self.max_input_rel.max(o.max_input_rel);
    }
}

/// Checks every weight gradient of the windowed loss (non-zero carried
/// state, fixed dropout masks) and every input Jacobian entry
/// `∂t_i/∂x[s][j][k]` for `s ≤ i` against central differences.
pub fn fd_check(seed: u64, n: usize, len: usize) -> FdReport {
    let mut rng = RngStream::derive(seed, 77);
    let org = Organization::ALL[rng.below(3)];
    let menu = build_menu(n, org, seed);
    let mut names = menu.items.clone();
    names.extend(["Alpha", "Beta Gamma", "Delta"].map(String::from));
    let table = synth_embeddings(&names, seed);
    let projection = fit_name_projection(&names, &table).unwrap();
    let ctx = FeatureContext { table, projection };
    let mut params: ModelParams = init_params(tiny_dims(), seed, ctx.projection.clone(), EmbeddingSource::Synthetic { seed }).unwrap();
    for w in &mut params.weights {
        *w += rng.uniform_range(-0.3, 0.3);
    }
    let inputs = MenuInputs::new(&menu, &ctx).unwrap();
    let targets: Vec<usize> = (0..len).map(|_| rng.below(n)).collect();
    let y: Vec<f64> = (0..len).map(|_| rng.uniform_range(0.5, 2.5)).collect();
    let c_s = 0.7;
    let pc = params.dims.pred_cells;
    let h0: Vec<f64> = (0..pc).map(|_| rng.uniform_range(-0.5, 0.5)).collect();
    let c0: Vec<f64> = (0..pc).map(|_| rng.uniform_range(-0.5, 0.5)).collect();
    let masks: Vec<Vec<f64>> = (0..len).map(|_| dropout_mask(params.dims.task_dim(), 0.1, &mut rng)).collect();

    let loss = |p: &ModelParams| -> f64 {
        let (t, _) = forward_window(p, &inputs, &targets, &h0, &c0, Some(&masks)).unwrap();
        t.iter().zip(&y).map(|(t, y)| (y - t) * (y - t)).sum::<f64>() / c_s
    };
    let (t, cache) = forward_window(&params, &inputs, &targets, &h0, &c0, Some(&masks)).unwrap();
    let dl: Vec<f64> = t.iter().zip(&y).map(|(t, y)| 2.0 * (t - y) / c_s).collect();
    let grads = backward_sequence(&params, &cache, &dl).unwrap();

    let mut report = FdReport::default();
    let mut probe = params.clone();
    for k in 0..params.weights.len() {
        let w = params.weights[k];
        probe.weights[k] = w + FD_STEP;
        let up = loss(&probe);
        probe.weights[k] = w - FD_STEP;
        let down = loss(&probe);
        probe.weights[k] = w;
        let numeric = (up - down) / (2.0 * FD_STEP);
        report.max_param_rel = report.max_param_rel.max(rel_error(grads[k], numeric));
        report.params_checked += 1;
    }

    let zero = vec![0.0; pc];
    for i in 0..len {
        for s in 0..=i {
            for j in 0..n {
                for k in 0..params.dims.item_dim {
                    let analytic = input_jacobian(&params, &inputs, &targets, i, s, j, k).unwrap();
                    let at = |delta: f64| {
                        let nudge = InputNudge { step: s, item: j, coord: k, delta };
                        forward_window_nudged(&params, &inputs, &targets[..=i], &zero, &zero, None, Some(nudge))
                            .unwrap()
                            .0[i]
                    };
                    let numeric = (at(FD_STEP) - at(-FD_STEP)) / (2.0 * FD_STEP);
                    report.max_input_rel = report.max_input_rel.max(rel_error(analytic, numeric));
                    report.inputs_checked += 1;
                }
            }
        }
    }
    report
}
