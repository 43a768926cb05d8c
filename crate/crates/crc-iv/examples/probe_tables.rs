use crc_iv::simulation::{run_study, DgpSpec, EstimatorKind, StudyConfig};

fn main() {
    let t0 = std::time::Instant::now();
    for gamma in [0.4, 0.0] {
        let cfg = StudyConfig::new(
            DgpSpec::with_gamma(gamma),
            vec![1000],
            vec![0.05, 0.07],
            1000,
            20260810,
        );
        let report = run_study(&cfg).unwrap();
        println!("gamma = {gamma}");
        for cell in &report.cells {
            let slope = &cell.components[1];
            println!(
                "  {:4} N={} h={:?}: slope bias {:+.4} std {:.4} mse {:.4}",
                cell.estimator.name(), cell.n, cell.h, slope.bias, slope.std, slope.mse
            );
        }
    }
    println!("elapsed {:?}", t0.elapsed());
    let _ = EstimatorKind::Crc;
}
