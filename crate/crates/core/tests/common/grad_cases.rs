//! Finite-difference gradient checks of every differentiable component, in
//! f64. Each returns a label and its report.

use hvan::attention::{CvaBlock, HvaStage, IvaBlock};
use hvan::fusion::HvafParams;
use hvan::network::Model;
use hvan::planes::View;
use hvan::train::focal_loss_graph;
use hvan_tensor::gradcheck::GradCheckReport;
use hvan_tensor::{ParamStore, Tensor};

use super::{check_gradients, project, randn, rng, tiny_model, FD_STEP, FD_STEP_NETWORK};

pub type Labeled = (String, GradCheckReport);

pub fn intra_view() -> Vec<Labeled> {
    [View::Transverse, View::Sagittal]
        .into_iter()
        .enumerate()
        .map(|(k, view)| {
            let block = IvaBlock::new("iva", view, 3, [3, 2, 4], 4).unwrap();
            let mut params = ParamStore::new();
            block.init(&mut params, &mut rng(k as u64));
            let x = randn(&[2, 3, 3, 2, 4], 10 + k as u64);
            let r = check_gradients(&params, FD_STEP, &[x], 6, 1, |cx, v| {
                let y = block.forward(cx, v[0]).unwrap();
                project(cx, y, 99)
            });
            (format!("{view} IVA"), r)
        })
        .collect()
}

pub fn cross_view() -> Vec<Labeled> {
    [View::Transverse, View::Sagittal]
        .into_iter()
        .enumerate()
        .map(|(k, view)| {
            let block = CvaBlock::new("cva", view, 3, [2, 3, 3], 5).unwrap();
            let mut params = ParamStore::new();
            block.init(&mut params, &mut rng(k as u64));
            let inputs = [randn(&[1, 3, 2, 3, 3], 20), randn(&[1, 3, 2, 3, 3], 21)];
            let r = check_gradients(&params, FD_STEP, &inputs, 6, 2, |cx, v| {
                let y = block.forward(cx, v[0], v[1]).unwrap();
                project(cx, y, 98)
            });
            (format!("{view} CVA"), r)
        })
        .collect()
}

pub fn hybrid_stage() -> Labeled {
    let spatial = [2, 2, 3];
    let stage = HvaStage {
        iva_t: Some(IvaBlock::new("it", View::Transverse, 2, spatial, 64).unwrap()),
        iva_s: Some(IvaBlock::new("is", View::Sagittal, 2, spatial, 64).unwrap()),
        cva_t: Some(CvaBlock::new("ct", View::Transverse, 2, spatial, 64).unwrap()),
        cva_s: Some(CvaBlock::new("cs", View::Sagittal, 2, spatial, 64).unwrap()),
    };
    let mut params = ParamStore::new();
    stage.init(&mut params, &mut rng(3));
    let inputs = [randn(&[1, 2, 2, 2, 3], 30), randn(&[1, 2, 2, 2, 3], 31)];
    let r = check_gradients(&params, FD_STEP, &inputs, 3, 3, |cx, v| {
        let (t, s) = stage.forward(cx, Some(v[0]), Some(v[1])).unwrap();
        let both = cx.g.concat(&[t.unwrap(), s.unwrap()], 1);
        project(cx, both, 97)
    });
    ("hybrid-view stage".into(), r)
}

pub fn adaptive_fusion() -> Labeled {
    let fusion = HvafParams::new("f", 4, 2).unwrap();
    let mut params = ParamStore::new();
    fusion.init(&mut params, &mut rng(4));
    let inputs = [randn(&[2, 4, 3, 2, 3], 40), randn(&[2, 4, 3, 2, 3], 41)];
    let r = check_gradients(&params, FD_STEP, &inputs, 12, 4, |cx, v| {
        let y = fusion.forward(cx, v[0], v[1]).unwrap();
        project(cx, y, 96)
    });
    ("adaptive fusion".into(), r)
}

pub fn focal_loss() -> Vec<Labeled> {
    let logits = Tensor::from_vec(&[6, 1], vec![-2.5, -0.4, 0.0, 0.3, 1.9, 4.2]).unwrap();
    let labels = [0, 1, 0, 1, 1, 0];
    [(0.25, 2.0), (0.5, 0.0), (0.7, 1.5)]
        .into_iter()
        .map(|(alpha, gamma)| {
            let r = check_gradients(&ParamStore::new(), FD_STEP, &[logits.clone()], 6, 5, |cx, v| {
                focal_loss_graph(&mut cx.g, v[0], &labels, alpha, gamma)
            });
            (format!("focal loss α={alpha} γ={gamma}"), r)
        })
        .collect()
}

/// The full dual-view model at 32³ with the narrowest channels, two entries
/// per tensor.
pub fn whole_network() -> Labeled {
    let model = Model::build(&tiny_model()).unwrap();
    let params = model.init::<f64>();
    let inputs = [randn(&[2, 1, 32, 32, 32], 50), randn(&[2, 1, 32, 32, 32], 51)];
    let r = check_gradients(&params, FD_STEP_NETWORK, &inputs, 2, 6, |cx, v| {
        let pass = model.forward_graph(cx, Some(v[0]), Some(v[1])).unwrap();
        focal_loss_graph(&mut cx.g, pass.logits, &[1, 0], 0.4, 2.0)
    });
    ("full model".into(), r)
}
