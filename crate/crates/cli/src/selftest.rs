//! Quick built-in checks of the numerical core, run by `lowswitch selftest`.

use lowswitch::criteria::{smallest_eigenvalue, theorem1_check, Criterion, StepInfo, VisitationCriterion};
use lowswitch::hashing::RandomProjection;
use lowswitch::metrics::{rsi, student_t_two_sided, welch_t_test, RsiInput};
use lowswitch::nn::Architecture;
use lowswitch::train::{run, RunConfig};
use lowswitch::{seed, Action, ActionSpace};

pub struct Check {
    pub name: &'static str,
    pub outcome: Result<String, String>,
}

fn expect(ok: bool, detail: String) -> Result<String, String> {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rsi_arithmetic() -> Result<String, String> {
    let input = |ratio: f64| RsiInput::new(1.0, ratio, 1.0, 1.0, 0.2).map_err(|e| e.to_string());
    let a = rsi(&input(1000.0)?, true);
    let b = rsi(&input(15152.0)?, true);
    let c = rsi(&input(15152.0)?, false);
    expect((a - 6.91).abs() < 0.01 && (b - 9.63).abs() < 0.01 && c == 15152.0, format!("{a:.4} {b:.4} {c}"))
}

fn theorem() -> Result<String, String> {
    let a = theorem1_check(4, 0.5).map_err(|e| e.to_string())?;
    let b = theorem1_check(8, 0.25).map_err(|e| e.to_string())?;
    expect(
        a.prediction_error == 0.5 && a.similarity == 0.5 && b.prediction_error == 0.25,
        format!("k=4: ({}, {}), k=8: {}", a.prediction_error, a.similarity, b.prediction_error),
    )
}

fn visitation() -> Result<String, String> {
    let proj = RandomProjection::seeded(16, 2, 0, seed::STREAM_CRITERION_HASH).map_err(|e| e.to_string())?;
    let mut c = VisitationCriterion::new(proj);
    let space = ActionSpace::Discrete(2);
    for _ in 0..1000 {
        c.observe(&StepInfo {
            state: &[0.3, -0.4],
            action: &Action::Discrete(0),
            episode_step: 0,
            action_space: &space,
        })
        .map_err(|e| e.to_string())?;
    }
    expect(c.triggers() == 10, format!("{} triggers for 1000 visits", c.triggers()))
}

fn gradients() -> Result<String, String> {
    let arch = Architecture::new(&[3, 5, 4, 2]).map_err(|e| e.to_string())?;
    let params = arch.init(&mut seed::rng(11, 0));
    let input = [0.4, -0.9, 0.25];
    let g = [1.0, -0.5];
    let trace = arch.trace(&params, &input).map_err(|e| e.to_string())?;
    let mut grads = vec![0.0; params.len()];
    arch.backward(&params, &trace, &g, &mut grads).map_err(|e| e.to_string())?;
    let f = |p: &[f64]| arch.output(p, &input).map(|o| o[0] * g[0] + o[1] * g[1]);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let (mut up, mut down) = (params.clone(), params.clone());
        up[i] += h;
        down[i] -= h;
        let fd = (f(&up).map_err(|e| e.to_string())? - f(&down).map_err(|e| e.to_string())?) / (2.0 * h);
        worst = worst.max((fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(1e-6));
    }
    expect(worst < 1e-4, format!("max relative error {worst:.2e}"))
}

fn eigen() -> Result<String, String> {
    let m = lowswitch_matrix(&[4.0, 1.0, 0.0, 1.0, 4.0, 0.0, 0.0, 0.0, 2.0]);
    // eigenvalues 5, 3, 2
    let v = smallest_eigenvalue(&m);
    expect((v - 2.0).abs() < 1e-12, format!("smallest eigenvalue {v}"))
}

fn lowswitch_matrix(rows: &[f64]) -> lowswitch::criteria::Matrix {
    lowswitch::criteria::Matrix::from_row_slice(3, 3, rows)
}

fn t_test() -> Result<String, String> {
    let p = student_t_two_sided(2.0, 10.0).map_err(|e| e.to_string())?;
    let same = welch_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).map_err(|e| e.to_string())?;
    expect(
        (p - 0.0734).abs() < 1e-3 && same.p == 1.0,
        format!("p(t=2, df=10) = {p:.6}, identical samples p = {}", same.p),
    )
}

fn training() -> Result<String, String> {
    let mut c = RunConfig::new("chain10", "dqn_lite", lowswitch::criteria::CriterionSpec::Fix { n: 100 }, 1200, 3);
    c.warmup = 200;
    c.hidden = Some(vec![16]);
    let a = run(&c).map_err(|e| e.to_string())?;
    let b = run(&c).map_err(|e| e.to_string())?;
    expect(a == b && a.switching_cost == 10, format!("switching cost {}, reproducible: {}", a.switching_cost, a == b))
}

pub fn run_all() -> Vec<Check> {
    vec![
        Check { name: "rsi arithmetic", outcome: rsi_arithmetic() },
        Check { name: "theorem construction", outcome: theorem() },
        Check { name: "visitation doubling", outcome: visitation() },
        Check { name: "mlp gradients", outcome: gradients() },
        Check { name: "symmetric eigenvalues", outcome: eigen() },
        Check { name: "student t tail", outcome: t_test() },
        Check { name: "short training run", outcome: training() },
    ]
}
