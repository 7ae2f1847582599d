// scratch probe: full-width forward timing
use gafx_core::extractors::{GafxA, GafxAConfig, GafxR, GafxRConfig, GafxU, GafxUConfig};
use gafx_core::tensor::{Tape, Tensor};

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "r".into());
    let t0 = std::time::Instant::now();
    match which.as_str() {
        "r" => {
            let model: GafxR<f32> = GafxR::new(GafxRConfig::new(1), 0).unwrap();
            let x = Tensor::new((0..661500).map(|i| ((i as f32) * 0.001).sin() * 0.4).collect(), &[661500]).unwrap();
            let tape = Tape::inference();
            let y = model.forward(&tape, &x, false).unwrap();
            eprintln!("R full: {:?} in {:.1}s", y.shape(), t0.elapsed().as_secs_f64());
        }
        "a" => {
            let model: GafxA<f32> = GafxA::new(GafxAConfig::new(1), 0).unwrap();
            let x = Tensor::new((0..661500).map(|i| ((i as f32) * 0.001).sin() * 0.4).collect(), &[661500]).unwrap();
            let tape = Tape::inference();
            let y = model.forward(&tape, &x, false).unwrap();
            eprintln!("A full: {:?} in {:.1}s", y.shape(), t0.elapsed().as_secs_f64());
        }
        "u4" => {
            let model: GafxU<f32> = GafxU::new(GafxUConfig::new(4), 0).unwrap();
            let data: Vec<f32> = (0..2 * 480000).map(|i| ((i as f32) * 0.0007).sin() * 0.4).collect();
            let x = Tensor::new(data, &[2, 480000]).unwrap();
            let tape = Tape::inference();
            let y = model.forward(&tape, &x).unwrap();
            eprintln!("U ws4: {:?} in {:.1}s", y.feature.shape(), t0.elapsed().as_secs_f64());
        }
        _ => {}
    }
}
