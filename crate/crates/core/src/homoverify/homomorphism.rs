//! Homomorphism conditions, policy lifting and the mirror-quotient grid.

use serde::{Deserialize, Serialize};

use super::mdp::{TabularMdp, Tokens};
use crate::envs::{GridWorld, GridWorldConfig};
use crate::error::{Error, Result};

/// Rewards are compared up to this absolute difference.
pub const REWARD_TOLERANCE: f64 = 1e-12;

/// State map `f` and state-dependent action map `g_s`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HomomorphismMap {
    pub f: Vec<usize>,
    /// `g[s * n_actions + a]`.
    pub g: Vec<usize>,
    pub n_actions: usize,
}

impl HomomorphismMap {
    pub fn identity(m: &TabularMdp) -> Self {
        Self {
            f: (0..m.n_states).collect(),
            g: (0..m.n_states).flat_map(|_| 0..m.n_actions).collect(),
            n_actions: m.n_actions,
        }
    }

    pub fn g(&self, s: usize, a: usize) -> usize {
        self.g[s * self.n_actions + a]
    }

    /// `n_states n_actions`, then `f` as one row, then `g` as one row per state.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.f.len(), self.n_actions);
        out.push_str(&self.f.iter().map(ToString::to_string).collect::<Vec<_>>().join(" "));
        out.push('\n');
        for row in self.g.chunks(self.n_actions.max(1)) {
            out.push_str(&row.iter().map(ToString::to_string).collect::<Vec<_>>().join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = Tokens::new(text, "map file");
        let n_states: usize = tokens.parse()?;
        let n_actions: usize = tokens.parse()?;
        let f = (0..n_states).map(|_| tokens.parse()).collect::<Result<_>>()?;
        let g = (0..n_states * n_actions).map(|_| tokens.parse()).collect::<Result<_>>()?;
        tokens.finish()?;
        Ok(Self { f, g, n_actions })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// The maps do not fit the two MDPs.
    Shape { message: String },
    Transition { state: usize, action: usize, expected: usize, found: usize },
    Reward { state: usize, action: usize, expected: f64, found: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomomorphismReport {
    pub transition_ok: bool,
    pub reward_ok: bool,
    pub violations: Vec<Violation>,
}

impl HomomorphismReport {
    pub fn passed(&self) -> bool {
        self.transition_ok && self.reward_ok && self.violations.is_empty()
    }
}

fn shape_problems(m: &TabularMdp, abs: &TabularMdp, h: &HomomorphismMap) -> Vec<String> {
    let mut out = Vec::new();
    if h.f.len() != m.n_states {
        out.push(format!("f covers {} of {} states", h.f.len(), m.n_states));
    }
    if h.n_actions != m.n_actions || h.g.len() != m.n_states * m.n_actions {
        out.push(format!("g must have {} x {} entries", m.n_states, m.n_actions));
    }
    if let Some(bad) = h.f.iter().find(|&&x| x >= abs.n_states) {
        out.push(format!("f maps to {bad}, outside {} abstract states", abs.n_states));
    }
    if let Some(bad) = h.g.iter().find(|&&x| x >= abs.n_actions) {
        out.push(format!("g maps to {bad}, outside {} abstract actions", abs.n_actions));
    }
    out
}

/// Checks `T(s,a) = s' => T̄(f(s), g_s(a)) = f(s')` and
/// `R̄(f(s), g_s(a)) = R(s, a)` over every state-action pair.
pub fn check_homomorphism(m: &TabularMdp, abs: &TabularMdp, h: &HomomorphismMap) -> HomomorphismReport {
    let shape = shape_problems(m, abs, h);
    if !shape.is_empty() {
        return HomomorphismReport {
            transition_ok: false,
            reward_ok: false,
            violations: shape.into_iter().map(|message| Violation::Shape { message }).collect(),
        };
    }
    let mut violations = Vec::new();
    let (mut transition_ok, mut reward_ok) = (true, true);
    for s in 0..m.n_states {
        for a in 0..m.n_actions {
            let (sb, ab) = (h.f[s], h.g(s, a));
            let expected = h.f[m.t(s, a)];
            let found = abs.t(sb, ab);
            if found != expected {
                transition_ok = false;
                violations.push(Violation::Transition { state: s, action: a, expected, found });
            }
            let (expected, found) = (m.r(s, a), abs.r(sb, ab));
            if (expected - found).abs() > REWARD_TOLERANCE {
                reward_ok = false;
                violations.push(Violation::Reward { state: s, action: a, expected, found });
            }
        }
    }
    HomomorphismReport { transition_ok, reward_ok, violations }
}

/// Abstract MDP induced by `h`, reading each abstract entry off the first
/// source pair that maps to it. Unreached abstract pairs become zero-reward
/// self-loops. Whether the result is a homomorphic image is left to
/// [`check_homomorphism`].
pub fn quotient(m: &TabularMdp, h: &HomomorphismMap, n_abstract_states: usize, n_abstract_actions: usize) -> Result<TabularMdp> {
    let mut next: Vec<Option<usize>> = vec![None; n_abstract_states * n_abstract_actions];
    let mut reward = vec![0.0; n_abstract_states * n_abstract_actions];
    let probe = TabularMdp { n_states: n_abstract_states, n_actions: n_abstract_actions, next: vec![], reward: vec![], gamma: m.gamma };
    if let Some(problem) = shape_problems(m, &probe, h).into_iter().next() {
        return Err(Error::Shape(problem));
    }
    for s in 0..m.n_states {
        for a in 0..m.n_actions {
            let i = h.f[s] * n_abstract_actions + h.g(s, a);
            if next[i].is_none() {
                next[i] = Some(h.f[m.t(s, a)]);
                reward[i] = m.r(s, a);
            }
        }
    }
    let next = next.iter().enumerate().map(|(i, t)| t.unwrap_or(i / n_abstract_actions)).collect();
    TabularMdp::new(n_abstract_states, n_abstract_actions, next, reward, m.gamma)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LiftedPolicy {
    pub policy: Vec<usize>,
    /// Whether the homomorphism held; lifting optimality is only
    /// guaranteed when it does.
    pub precondition: HomomorphismReport,
}

/// `pi(s)` = lowest `a` with `g_s(a) = pi_bar(f(s))`.
pub fn lift_policy(m: &TabularMdp, abs: &TabularMdp, h: &HomomorphismMap, pi_bar: &[usize]) -> Result<LiftedPolicy> {
    let precondition = check_homomorphism(m, abs, h);
    if precondition.violations.iter().any(|v| matches!(v, Violation::Shape { .. })) {
        return Err(Error::Shape("homomorphism map does not fit the MDPs".into()));
    }
    if pi_bar.len() != abs.n_states {
        return Err(Error::Shape(format!("abstract policy covers {} of {} states", pi_bar.len(), abs.n_states)));
    }
    let policy = (0..m.n_states)
        .map(|s| {
            let target = pi_bar[h.f[s]];
            (0..m.n_actions)
                .find(|&a| h.g(s, a) == target)
                .ok_or(Error::NoPreimage { state: s, abstract_action: target })
        })
        .collect::<Result<_>>()?;
    Ok(LiftedPolicy { policy, precondition })
}

/// Result of solving the abstract MDP and lifting its optimal policy.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftingCheck {
    pub homomorphism: HomomorphismReport,
    pub lifted: Vec<usize>,
    pub v_lifted: Vec<f64>,
    pub v_optimal: Vec<f64>,
    pub max_value_gap: f64,
}

impl LiftingCheck {
    pub fn optimal_within(&self, tol: f64) -> bool {
        self.homomorphism.passed() && self.max_value_gap <= tol
    }
}

/// Value iteration on `abs`, lift, then exact evaluation of the lift
/// against value iteration on `m`.
pub fn verify_lifting(m: &TabularMdp, abs: &TabularMdp, h: &HomomorphismMap) -> Result<LiftingCheck> {
    let (_, pi_bar) = abs.value_iteration();
    let lifted = lift_policy(m, abs, h, &pi_bar)?;
    let v_lifted = m.evaluate_policy(&lifted.policy)?;
    let (v_optimal, _) = m.value_iteration();
    let max_value_gap = v_lifted.iter().zip(&v_optimal).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(LiftingCheck { homomorphism: lifted.precondition, lifted: lifted.policy, v_lifted, v_optimal, max_value_gap })
}

/// Image of each compass move under the transpose `(r, c) -> (c, r)`.
pub const MIRROR_ACTION: [usize; 8] = [3, 2, 1, 0, 7, 5, 6, 4];

/// A square grid, its quotient by the main-diagonal mirror, and the map
/// between them. The goal must lie on the diagonal.
pub struct MirrorQuotient {
    pub world: GridWorld,
    pub mdp: TabularMdp,
    pub abstract_mdp: TabularMdp,
    pub map: HomomorphismMap,
}

pub fn mirror_quotient(config: GridWorldConfig, gamma: f64) -> Result<MirrorQuotient> {
    if config.rows() != config.cols() {
        return Err(Error::Config("mirror quotient needs a square grid".into()));
    }
    let goal = config.goal_cell();
    if goal.0 != goal.1 {
        return Err(Error::Config("mirror quotient needs the goal on the diagonal".into()));
    }
    let n = config.rows();
    let k = config.n_actions;
    let world = GridWorld::new(config)?;
    let mdp = TabularMdp::from_grid(&world, gamma)?;
    // abstract states: cells with r <= c, in row-major order
    let canonical: Vec<(usize, usize)> = (0..n).flat_map(|r| (r..n).map(move |c| (r, c))).collect();
    let class = |r: usize, c: usize| {
        let (lo, hi) = (r.min(c), r.max(c));
        canonical.iter().position(|&x| x == (lo, hi)).expect("canonical cell")
    };
    let mut f = Vec::with_capacity(n * n);
    let mut g = Vec::with_capacity(n * n * k);
    for r in 0..n {
        for c in 0..n {
            f.push(class(r, c));
            g.extend((0..k).map(|a| if r > c { MIRROR_ACTION[a] } else { a }));
        }
    }
    let map = HomomorphismMap { f, g, n_actions: k };
    let abstract_mdp = quotient(&mdp, &map, canonical.len(), k)?;
    Ok(MirrorQuotient { world, mdp, abstract_mdp, map })
}

/// Tabular MDP with an explicit next-state distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct StochasticMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `p[(s * n_actions + a) * n_states + s']`.
    pub p: Vec<f64>,
    pub reward: Vec<f64>,
}

impl StochasticMdp {
    pub fn new(n_states: usize, n_actions: usize, p: Vec<f64>, reward: Vec<f64>) -> Result<Self> {
        if p.len() != n_states * n_actions * n_states || reward.len() != n_states * n_actions {
            return Err(Error::Shape("stochastic MDP tables have the wrong size".into()));
        }
        for row in p.chunks(n_states) {
            let total: f64 = row.iter().sum();
            if row.iter().any(|&x| x < 0.0) || (total - 1.0).abs() > 1e-12 {
                return Err(Error::Config("transition rows must be probability distributions".into()));
            }
        }
        Ok(Self { n_states, n_actions, p, reward })
    }

    pub fn prob(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.p[(s * self.n_actions + a) * self.n_states + s_next]
    }

    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StochasticViolation {
    pub state: usize,
    pub action: usize,
    /// Abstract successor class, or `None` for a reward mismatch.
    pub class: Option<usize>,
    pub expected: f64,
    pub found: f64,
}

/// Checks `T̄(f(s')|f(s), g_s(a)) = sum_{s'' in [s']_f} T(s''|s, a)` and the
/// reward identity for every `s, a` and every abstract successor class.
pub fn check_stochastic_homomorphism(
    m: &StochasticMdp,
    abs: &StochasticMdp,
    h: &HomomorphismMap,
    tol: f64,
) -> Result<Vec<StochasticViolation>> {
    if h.f.len() != m.n_states || h.g.len() != m.n_states * m.n_actions {
        return Err(Error::Shape("homomorphism map does not fit the MDP".into()));
    }
    if h.f.iter().any(|&x| x >= abs.n_states) || h.g.iter().any(|&x| x >= abs.n_actions) {
        return Err(Error::Shape("homomorphism map leaves the abstract MDP".into()));
    }
    let mut out = Vec::new();
    for s in 0..m.n_states {
        for a in 0..m.n_actions {
            let (sb, ab) = (h.f[s], h.g(s, a));
            let mut mass = vec![0.0; abs.n_states];
            for s2 in 0..m.n_states {
                mass[h.f[s2]] += m.prob(s, a, s2);
            }
            for (class, &expected) in mass.iter().enumerate() {
                let found = abs.prob(sb, ab, class);
                if (expected - found).abs() > tol {
                    out.push(StochasticViolation { state: s, action: a, class: Some(class), expected, found });
                }
            }
            let (expected, found) = (m.r(s, a), abs.r(sb, ab));
            if (expected - found).abs() > tol {
                out.push(StochasticViolation { state: s, action: a, class: None, expected, found });
            }
        }
    }
    Ok(out)
}
