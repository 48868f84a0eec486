//! Communication-cost model.
//!
//! Closed forms (bytes, client-to-server unless noted):
//!
//! * FedAvg total: `T * C * N * M`
//! * score-only total: `T * (N * 4 + M + eps)`
//! * normalized score-only cost: `T_x * (N * 4 + M + eps) / (T_ave * C * N * M)`,
//!   which for `C = 1` and negligible `N * 4 + eps` reduces to `T_x / (T_ave * N)`.
//!
//! Fractions and ratios are exact rationals; byte counts are integers.

use num_rational::Rational64;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, LedgerMismatch, Result};

/// Size of one uploaded score.
pub const SCORE_BYTES: u64 = 4;

/// Clients selected per FedAvg round: `max(floor(C * K), 1)`.
pub fn clients_per_round(fraction: f64, num_clients: usize) -> usize {
    ((fraction * num_clients as f64 + 1e-9).floor() as usize).clamp(1, num_clients.max(1))
}

/// Exact rational for a configured fraction such as `0.1`.
pub fn fraction_ratio(fraction: f64) -> Result<Rational64> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::config("fraction", "must lie in [0, 1]"));
    }
    Rational64::approximate_float(fraction)
        .ok_or_else(|| Error::config("fraction", format!("{fraction} has no rational form")))
}

fn as_i64(v: u64) -> i64 {
    i64::try_from(v).expect("byte counts fit in i64")
}

/// `T * C * N * M`.
pub fn cost_fedavg(
    rounds: u64,
    fraction: Rational64,
    num_clients: u64,
    model_bytes: u64,
) -> Rational64 {
    fraction * Rational64::from_integer(as_i64(rounds) * as_i64(num_clients) * as_i64(model_bytes))
}

/// `T * (N * 4 + M + eps)`.
pub fn cost_fedx(rounds: u64, num_clients: u64, model_bytes: u64, epsilon: u64) -> u64 {
    rounds * (num_clients * SCORE_BYTES + model_bytes + epsilon)
}

/// `T_x / (T_ave * N)`.
pub fn normalized_cost(rounds_x: u64, rounds_avg: u64, num_clients: u64) -> Result<Rational64> {
    if rounds_avg == 0 {
        return Err(Error::InvalidInput(
            "baseline round count must be at least 1".into(),
        ));
    }
    if num_clients == 0 {
        return Err(Error::InvalidInput(
            "client count must be at least 1".into(),
        ));
    }
    Ok(Rational64::new(
        as_i64(rounds_x),
        as_i64(rounds_avg * num_clients),
    ))
}

/// Full ratio of score-only bytes to FedAvg bytes, with each side at its own round count.
pub fn normalized_cost_general(
    rounds_x: u64,
    rounds_avg: u64,
    num_clients: u64,
    model_bytes: u64,
    epsilon: u64,
    fraction: Rational64,
) -> Result<Rational64> {
    let denominator = cost_fedavg(rounds_avg, fraction, num_clients, model_bytes);
    if denominator.is_zero() {
        return Err(Error::InvalidInput("FedAvg baseline cost is zero".into()));
    }
    let numerator = Rational64::from_integer(as_i64(cost_fedx(
        rounds_x,
        num_clients,
        model_bytes,
        epsilon,
    )));
    Ok(numerator / denominator)
}

/// A ratio expressed in tenths of a percent, rounded half up.
pub fn percent_tenths(ratio: Rational64) -> i64 {
    (ratio * Rational64::from_integer(1000) + Rational64::new(1, 2))
        .floor()
        .to_integer()
}

pub fn to_f64(ratio: Rational64) -> f64 {
    ratio.to_f64().unwrap_or(f64::NAN)
}

/// Which closed form a ledger is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostModel {
    FedAvg,
    ScoreOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub round: usize,
    pub up_bytes: u64,
    pub down_bytes: u64,
}

/// Per-round byte counts of one run together with the cost-model inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub model: CostModel,
    /// `M`
    pub model_bytes: u64,
    /// `N`
    pub num_clients: u64,
    /// `C`
    pub fraction: f64,
    /// `eps`
    pub epsilon: u64,
    pub entries: Vec<LedgerEntry>,
}

impl CostLedger {
    pub fn new(
        model: CostModel,
        model_bytes: u64,
        num_clients: u64,
        fraction: f64,
        epsilon: u64,
    ) -> Self {
        Self {
            model,
            model_bytes,
            num_clients,
            fraction,
            epsilon,
            entries: Vec::new(),
        }
    }

    pub fn open_round(&mut self, round: usize) {
        self.entries.push(LedgerEntry {
            round,
            up_bytes: 0,
            down_bytes: 0,
        });
    }

    fn current(&mut self) -> &mut LedgerEntry {
        self.entries.last_mut().expect("a round is open")
    }

    pub fn charge_up(&mut self, bytes: u64) {
        self.current().up_bytes += bytes;
    }

    pub fn charge_down(&mut self, bytes: u64) {
        self.current().down_bytes += bytes;
    }

    pub fn rounds(&self) -> u64 {
        self.entries.len() as u64
    }

    pub fn total_up(&self) -> u64 {
        self.entries.iter().map(|e| e.up_bytes).sum()
    }

    pub fn total_down(&self) -> u64 {
        self.entries.iter().map(|e| e.down_bytes).sum()
    }

    pub fn selected_per_round(&self) -> u64 {
        clients_per_round(self.fraction, self.num_clients as usize) as u64
    }

    /// Expected `(up, down)` bytes of a single round.
    pub fn expected_round(&self) -> (u64, u64) {
        let m = self.model_bytes;
        match self.model {
            CostModel::FedAvg => {
                let k = self.selected_per_round();
                (k * m, k * m)
            }
            CostModel::ScoreOnly => {
                let n = self.num_clients;
                (n * SCORE_BYTES + m, n * m + self.epsilon)
            }
        }
    }

    /// Expected upload total from the closed form for the rounds recorded.
    pub fn expected_total_up(&self) -> u64 {
        let t = self.rounds();
        match self.model {
            CostModel::FedAvg => t * self.selected_per_round() * self.model_bytes,
            CostModel::ScoreOnly => cost_fedx(t, self.num_clients, self.model_bytes, 0),
        }
    }

    pub fn expected_total_down(&self) -> u64 {
        let t = self.rounds();
        match self.model {
            CostModel::FedAvg => t * self.selected_per_round() * self.model_bytes,
            CostModel::ScoreOnly => t * (self.num_clients * self.model_bytes + self.epsilon),
        }
    }

    /// Checks every round and both totals against the closed form.
    pub fn verify(&self) -> Result<LedgerCheck, LedgerMismatch> {
        let (up, down) = self.expected_round();
        for e in &self.entries {
            for (direction, expected, actual) in
                [("up", up, e.up_bytes), ("down", down, e.down_bytes)]
            {
                if expected != actual {
                    return Err(LedgerMismatch {
                        location: format!("round {}", e.round),
                        direction,
                        expected,
                        actual,
                    });
                }
            }
        }
        let check = LedgerCheck {
            rounds: self.rounds(),
            expected_up: self.expected_total_up(),
            actual_up: self.total_up(),
            expected_down: self.expected_total_down(),
            actual_down: self.total_down(),
        };
        if check.expected_up != check.actual_up {
            return Err(LedgerMismatch {
                location: "total".into(),
                direction: "up",
                expected: check.expected_up,
                actual: check.actual_up,
            });
        }
        if check.expected_down != check.actual_down {
            return Err(LedgerMismatch {
                location: "total".into(),
                direction: "down",
                expected: check.expected_down,
                actual: check.actual_down,
            });
        }
        Ok(check)
    }
}

/// Both sides of a successful ledger verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerCheck {
    pub rounds: u64,
    pub expected_up: u64,
    pub actual_up: u64,
    pub expected_down: u64,
    pub actual_down: u64,
}

/// Recomputes the closed-form cost of a finished run and compares it with its ledger.
pub fn ledger_assert(run: &crate::report::RunReport) -> Result<LedgerCheck> {
    Ok(run.ledger.verify()?)
}

/// A published cost figure to reproduce.
#[derive(Debug, Clone, PartialEq)]
pub struct CostFigure {
    pub label: &'static str,
    pub kind: FigureKind,
    /// Expected percentage, compared after rounding to one decimal.
    pub expected_percent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FigureKind {
    /// Score-only run of `rounds` against FedAvg (`C = 1`) over `baseline_rounds`, `N` clients.
    RoundRatio {
        rounds: u64,
        baseline_rounds: u64,
        num_clients: u64,
    },
    /// FedAvg at fraction `C` against FedAvg at `C = 1`, same rounds.
    Fraction { fraction: f64 },
}

pub fn reference_figures() -> Vec<CostFigure> {
    let ratio = |label, rounds, expected_percent| CostFigure {
        label,
        kind: FigureKind::RoundRatio {
            rounds,
            baseline_rounds: 30,
            num_clients: 10,
        },
        expected_percent,
    };
    let frac = |label, fraction, expected_percent| CostFigure {
        label,
        kind: FigureKind::Fraction { fraction },
        expected_percent,
    };
    vec![
        ratio("FedBWO (4 rounds)", 4, 1.3),
        ratio("FedPSO (29 rounds)", 29, 9.7),
        ratio("FedSCA (27 rounds)", 27, 9.0),
        ratio("FedGWO (25 rounds)", 25, 8.3),
        frac("FedAvg C=0.5", 0.5, 50.0),
        frac("FedAvg C=0.2", 0.2, 20.0),
        frac("FedAvg C=0.1", 0.1, 10.0),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct FigureCheck {
    pub label: &'static str,
    pub exact: Rational64,
    pub computed_tenths: i64,
    pub expected_tenths: i64,
    pub pass: bool,
}

impl FigureCheck {
    pub fn computed_percent(&self) -> f64 {
        to_f64(self.exact) * 100.0
    }
}

/// Nominal model size for fraction ratios; the ratio does not depend on it.
const NOMINAL_MODEL_BYTES: u64 = 1_000_000;

pub fn check_figures(figures: &[CostFigure]) -> Result<Vec<FigureCheck>> {
    figures
        .iter()
        .map(|f| {
            let exact = match f.kind {
                FigureKind::RoundRatio {
                    rounds,
                    baseline_rounds,
                    num_clients,
                } => normalized_cost(rounds, baseline_rounds, num_clients)?,
                FigureKind::Fraction { fraction } => {
                    let part = cost_fedavg(30, fraction_ratio(fraction)?, 10, NOMINAL_MODEL_BYTES);
                    let full =
                        cost_fedavg(30, Rational64::from_integer(1), 10, NOMINAL_MODEL_BYTES);
                    part / full
                }
            };
            let computed_tenths = percent_tenths(exact);
            let expected_tenths = (f.expected_percent * 10.0).round() as i64;
            Ok(FigureCheck {
                label: f.label,
                exact,
                computed_tenths,
                expected_tenths,
                pass: computed_tenths == expected_tenths,
            })
        })
        .collect()
}

/// Checks the seven reference cost percentages.
pub fn validate_reference_costs() -> Result<Vec<FigureCheck>> {
    check_figures(&reference_figures())
}

pub fn render_figure_table(rows: &[FigureCheck]) -> String {
    let mut out = format!(
        "{:<22} {:>10} {:>9} {:>9}  result\n",
        "figure", "exact %", "rounded", "expected"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<22} {:>10.4} {:>9.1} {:>9.1}  {}\n",
            r.label,
            r.computed_percent(),
            r.computed_tenths as f64 / 10.0,
            r.expected_tenths as f64 / 10.0,
            if r.pass { "PASS" } else { "FAIL" }
        ));
    }
    out
}
