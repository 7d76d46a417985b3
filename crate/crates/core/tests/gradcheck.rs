use triad::diffcore::{gradcheck, gradcheck_suite, Function, Graph};
use triad::diffcore::suite::{CASES, DEFAULT_EPSILON, DEFAULT_TOLERANCE};
use triad::{Result, Tensor, Tensor64};

#[test]
fn every_case_passes_on_a_short_run() {
    let rows = gradcheck_suite(11, 5, &[]).unwrap();
    assert_eq!(rows.len(), CASES.len());
    for r in &rows {
        assert_eq!(r.points, 5);
        assert!(r.passed(DEFAULT_TOLERANCE), "{} max error {:e}", r.name, r.max_rel_error);
    }
}

#[test]
fn suite_is_reproducible_and_filterable() {
    let a = gradcheck_suite(3, 2, &["focal", "dense"]).unwrap();
    let b = gradcheck_suite(3, 2, &["dense", "focal"]).unwrap();
    assert_eq!(a.len(), 2);
    let names: Vec<&str> = a.iter().map(|r| r.name).collect();
    assert!(names.contains(&"focal") && names.contains(&"dense"));
    for r in &a {
        let twin = b.iter().find(|s| s.name == r.name).unwrap();
        assert_eq!(r.max_rel_error.to_bits(), twin.max_rel_error.to_bits());
    }
    assert!(gradcheck_suite(3, 1, &["no_such_case"]).unwrap().is_empty());
}

/// `x³` with a backward that is deliberately off by a factor.
struct WrongCube(f64);

impl Function<f64> for WrongCube {
    fn name(&self) -> &'static str {
        "wrong_cube"
    }

    fn forward(&mut self, i: &[&Tensor64]) -> Result<Tensor64> {
        Ok(i[0].map(|x| x * x * x))
    }

    fn backward(&self, i: &[&Tensor64], _: &Tensor64, g: &Tensor64) -> Vec<Tensor64> {
        let mut d = g.clone();
        for (dv, &x) in d.data_mut().iter_mut().zip(i[0].data()) {
            *dv *= self.0 * 3.0 * x * x;
        }
        vec![d]
    }
}

fn cube_report(factor: f64) -> f64 {
    let point = Tensor::new(vec![3], vec![0.7, -1.2, 2.0]).unwrap();
    gradcheck(
        |g: &mut Graph<f64>, x| {
            let y = g.apply(WrongCube(factor), &[x])?;
            g.sum(y)
        },
        &point,
        DEFAULT_EPSILON,
    )
    .unwrap()
    .max_rel_error
}

#[test]
fn checker_flags_a_wrong_backward() {
    assert!(cube_report(1.0) < 1e-8);
    assert!(cube_report(1.001) > DEFAULT_TOLERANCE);
}
