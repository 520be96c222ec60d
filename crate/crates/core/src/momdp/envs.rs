//! Built-in environments and test fixtures.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvMetadata, TabularMomdp};
use crate::error::{MoacError, Result};

/// Grid layout for resource gathering. Cells are `(row, col)`; row 0 is the top.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceLayout {
    pub size: usize,
    pub home: (usize, usize),
    pub gold: (usize, usize),
    pub diamond: (usize, usize),
    pub enemies: Vec<(usize, usize)>,
    /// Probability that entering an enemy cell kills the agent.
    pub attack_probability: f64,
    pub discount: f64,
}

impl Default for ResourceLayout {
    fn default() -> Self {
        Self {
            size: 5,
            home: (4, 2),
            gold: (0, 2),
            diamond: (1, 4),
            enemies: vec![(0, 3), (1, 2)],
            attack_probability: 0.1,
            discount: 0.95,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum RgState {
    Cell { row: usize, col: usize, gold: bool, diamond: bool },
    Killed,
}

impl RgState {
    fn label(&self) -> String {
        match *self {
            RgState::Cell { row, col, gold, diamond } => {
                format!("({row},{col},{},{})", gold as u8, diamond as u8)
            }
            RgState::Killed => "killed".to_string(),
        }
    }
}

/// Resource gathering with the default layout.
pub fn build_resource_gathering() -> TabularMomdp {
    build_resource_gathering_with(&ResourceLayout::default())
        .expect("default resource-gathering layout is valid")
}

/// Resource gathering as a continuing chain.
///
/// Objectives: 0 enemy survival, 1 gold delivered home, 2 diamond delivered
/// home. Terminal events become states: a kill lands in a `killed` state and
/// returning home with a resource lands in the home cell with its flags set;
/// every action from either resets to home with flags cleared and pays the
/// event's reward. Survival is shifted by +1 so it pays 1 per step and 0 on
/// the kill step. Only states reachable from home are kept.
pub fn build_resource_gathering_with(layout: &ResourceLayout) -> Result<TabularMomdp> {
    let n = layout.size;
    let cells = [layout.home, layout.gold, layout.diamond]
        .into_iter()
        .chain(layout.enemies.iter().copied());
    if n == 0 || cells.clone().any(|(r, c)| r >= n || c >= n) {
        return Err(MoacError::Parameter("layout cell outside the grid".into()));
    }
    if !(layout.attack_probability > 0.0 && layout.attack_probability < 1.0) {
        return Err(MoacError::Parameter("attack probability must lie in (0, 1)".into()));
    }
    let start = RgState::Cell { row: layout.home.0, col: layout.home.1, gold: false, diamond: false };
    let is_enemy = |cell: (usize, usize)| layout.enemies.contains(&cell);

    // successor distribution and native-shifted reward vector for each action
    let step = |state: RgState, action: usize| -> (Vec<(RgState, f64)>, [f64; 3]) {
        match state {
            RgState::Killed => (vec![(start, 1.0)], [0.0, 0.0, 0.0]),
            RgState::Cell { row, col, gold, diamond } if (row, col) == layout.home && (gold || diamond) => {
                (vec![(start, 1.0)], [1.0, gold as u8 as f64, diamond as u8 as f64])
            }
            RgState::Cell { row, col, gold, diamond } => {
                let (r2, c2) = match action {
                    0 => (row.saturating_sub(1), col),
                    1 => ((row + 1).min(n - 1), col),
                    2 => (row, col.saturating_sub(1)),
                    _ => (row, (col + 1).min(n - 1)),
                };
                let next = RgState::Cell {
                    row: r2,
                    col: c2,
                    gold: gold || (r2, c2) == layout.gold,
                    diamond: diamond || (r2, c2) == layout.diamond,
                };
                let succ = if is_enemy((r2, c2)) {
                    vec![(RgState::Killed, layout.attack_probability), (next, 1.0 - layout.attack_probability)]
                } else {
                    vec![(next, 1.0)]
                };
                (succ, [1.0, 0.0, 0.0])
            }
        }
    };

    // breadth-first enumeration from home keeps indices stable and drops unreachable states
    let mut index: BTreeMap<RgState, usize> = BTreeMap::new();
    let mut order = Vec::new();
    let mut queue = VecDeque::from([start]);
    index.insert(start, 0);
    order.push(start);
    while let Some(s) = queue.pop_front() {
        for a in 0..4 {
            for (s2, _) in step(s, a).0 {
                if let Entry::Vacant(slot) = index.entry(s2) {
                    slot.insert(order.len());
                    order.push(s2);
                    queue.push_back(s2);
                }
            }
        }
    }

    let ns = order.len();
    let na = 4;
    let mut transition = vec![0.0; ns * na * ns];
    let mut reward = vec![0.0; 3 * ns * na];
    for (si, &s) in order.iter().enumerate() {
        for a in 0..na {
            let (succ, r) = step(s, a);
            for (s2, p) in succ {
                transition[(si * na + a) * ns + index[&s2]] += p;
            }
            for (i, ri) in r.iter().enumerate() {
                reward[(i * ns + si) * na + a] = *ri;
            }
        }
    }
    let mut initial = vec![0.0; ns];
    initial[0] = 1.0;

    let mut notes = BTreeMap::new();
    notes.insert("grid".into(), format!("{n}x{n}"));
    notes.insert("home".into(), format!("{:?}", layout.home));
    notes.insert("gold".into(), format!("{:?}", layout.gold));
    notes.insert("diamond".into(), format!("{:?}", layout.diamond));
    notes.insert("enemies".into(), format!("{:?}", layout.enemies));
    notes.insert("attack_probability".into(), layout.attack_probability.to_string());
    notes.insert("actions".into(), "0 up, 1 down, 2 left, 3 right".into());
    notes.insert(
        "objectives".into(),
        "0 enemy survival (native -1 on kill, shifted +1), 1 gold home, 2 diamond home".into(),
    );
    notes.insert("termination".into(), "kill and home arrival reset to home with flags cleared".into());

    TabularMomdp::new(
        ns,
        na,
        3,
        transition,
        reward,
        vec![layout.discount; 3],
        initial,
        1.0,
        EnvMetadata {
            name: "resource-gathering".into(),
            reward_shift: vec![1.0, 0.0, 0.0],
            state_labels: order.iter().map(RgState::label).collect(),
            notes,
        },
    )
}

/// Default discounts for fishwood: wood, fish.
pub const FISHWOOD_DISCOUNTS: [f64; 2] = [0.8, 0.9];

/// Fishwood with the default per-objective discounts.
pub fn build_fishwood(fish_proba: f64, wood_proba: f64) -> Result<TabularMomdp> {
    build_fishwood_with_discounts(fish_proba, wood_proba, FISHWOOD_DISCOUNTS)
}

/// Fishwood as a continuing chain with deterministic per-state rewards.
///
/// The Bernoulli catch is folded into the state: states are
/// `0 fishing/empty, 1 fishing/caught, 2 woods/empty, 3 woods/collected`.
/// Action 0 goes fishing and action 1 goes to the woods; the catch is drawn on
/// arrival and paid on the next step. Objective 0 is wood, objective 1 is fish.
/// The agent starts in the woods.
pub fn build_fishwood_with_discounts(
    fish_proba: f64,
    wood_proba: f64,
    discounts: [f64; 2],
) -> Result<TabularMomdp> {
    for (name, p) in [("fish_proba", fish_proba), ("wood_proba", wood_proba)] {
        if !(p > 0.0 && p < 1.0) {
            return Err(MoacError::Parameter(format!("{name} = {p} must lie in (0, 1)")));
        }
    }
    let (ns, na) = (4, 2);
    let mut transition = vec![0.0; ns * na * ns];
    for s in 0..ns {
        let fish = (s * na) * ns;
        transition[fish] = 1.0 - fish_proba;
        transition[fish + 1] = fish_proba;
        let wood = (s * na + 1) * ns;
        transition[wood + 2] = 1.0 - wood_proba;
        transition[wood + 3] = wood_proba;
    }
    let mut reward = vec![0.0; 2 * ns * na];
    for a in 0..na {
        reward[3 * na + a] = 1.0; // wood collected
        reward[(ns + 1) * na + a] = 1.0; // fish caught
    }
    let mut notes = BTreeMap::new();
    notes.insert("fish_proba".into(), fish_proba.to_string());
    notes.insert("wood_proba".into(), wood_proba.to_string());
    notes.insert("actions".into(), "0 go fishing, 1 go collect wood".into());
    notes.insert("objectives".into(), "0 wood, 1 fish".into());
    TabularMomdp::new(
        ns,
        na,
        2,
        transition,
        reward,
        discounts.to_vec(),
        vec![0.0, 0.0, 1.0 - wood_proba, wood_proba],
        1.0,
        EnvMetadata {
            name: "fishwood".into(),
            reward_shift: vec![0.0, 0.0],
            state_labels: ["fishing", "fishing+fish", "woods", "woods+wood"]
                .map(String::from)
                .to_vec(),
            notes,
        },
    )
}

/// Two-state, two-action, two-objective chain used by the critic checks.
pub fn two_state_fixture() -> TabularMomdp {
    // action 0 tends to stay, action 1 tends to switch
    let transition = vec![
        0.8, 0.2, 0.3, 0.7, //
        0.2, 0.8, 0.7, 0.3,
    ];
    let reward = vec![
        1.0, 0.5, 0.0, 0.1, // objective 0 prefers state 0
        0.2, 0.0, 1.0, 0.6, // objective 1 prefers state 1
    ];
    TabularMomdp::new(
        2,
        2,
        2,
        transition,
        reward,
        vec![0.9, 0.8],
        vec![1.0, 0.0],
        1.0,
        EnvMetadata {
            name: "two-state".into(),
            reward_shift: vec![0.0, 0.0],
            ..EnvMetadata::default()
        },
    )
    .expect("fixture is valid")
}

/// Random dense MOMDP: strictly positive transitions, rewards in `[0, 1]`,
/// discounts in `[0.5, 0.95]`.
pub fn random_momdp(n_states: usize, n_actions: usize, n_objectives: usize, seed: u64) -> TabularMomdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        let row: Vec<f64> = (0..n_states).map(|_| rng.random_range(0.05..1.0)).collect();
        let sum: f64 = row.iter().sum();
        let mut row: Vec<f64> = row.iter().map(|x| x / sum).collect();
        // put the rounding residue on the largest entry so the row sums to 1
        let resid = 1.0 - row.iter().sum::<f64>();
        let k = (0..n_states).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        row[k] += resid;
        transition.extend(row);
    }
    let reward = (0..n_objectives * n_states * n_actions)
        .map(|_| rng.random_range(0.0..1.0))
        .collect();
    let discounts = (0..n_objectives).map(|_| rng.random_range(0.5..0.95)).collect();
    let mut initial: Vec<f64> = (0..n_states).map(|_| rng.random_range(0.05..1.0)).collect();
    let sum: f64 = initial.iter().sum();
    initial.iter_mut().for_each(|x| *x /= sum);
    let resid = 1.0 - initial.iter().sum::<f64>();
    initial[0] += resid;
    TabularMomdp::new(
        n_states,
        n_actions,
        n_objectives,
        transition,
        reward,
        discounts,
        initial,
        1.0,
        EnvMetadata {
            name: format!("random-{n_states}x{n_actions}x{n_objectives}-{seed}"),
            reward_shift: vec![0.0; n_objectives],
            ..EnvMetadata::default()
        },
    )
    .expect("random fixture is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resource_gathering_shape() {
        let env = build_resource_gathering();
        assert_eq!(env.n_actions(), 4);
        assert_eq!(env.n_objectives(), 3);
        assert!(env.n_states() <= 100);
        assert_eq!(env.metadata().reward_shift, vec![1.0, 0.0, 0.0]);
        // resource cells without their flag are unreachable: 100 - 4 + killed
        assert_eq!(env.n_states(), 97);
    }

    #[test]
    fn resource_gathering_home_with_flags_resets() {
        let env = build_resource_gathering();
        let labels = &env.metadata().state_labels;
        let home_full = labels.iter().position(|l| l == "(4,2,1,1)").unwrap();
        let home_empty = labels.iter().position(|l| l == "(4,2,0,0)").unwrap();
        for a in 0..4 {
            assert_eq!(env.transition_row(home_full, a)[home_empty], 1.0);
            assert_eq!(env.reward_vector(home_full, a), vec![1.0, 1.0, 1.0]);
        }
        let killed = labels.iter().position(|l| l == "killed").unwrap();
        assert_eq!(env.reward_vector(killed, 0), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn resource_gathering_enemy_attack() {
        let env = build_resource_gathering();
        let labels = &env.metadata().state_labels;
        // from (0,4,0,1) moving left enters the enemy at (0,3)
        let s = labels.iter().position(|l| l == "(0,4,0,1)").unwrap();
        let killed = labels.iter().position(|l| l == "killed").unwrap();
        assert!((env.transition_row(s, 2)[killed] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn fishwood_rejects_bad_probability() {
        assert!(build_fishwood(0.0, 0.5).is_err());
        assert!(build_fishwood(0.5, 1.0).is_err());
        assert_eq!(build_fishwood(0.5, 0.5).unwrap().n_objectives(), 2);
    }

    #[test]
    fn random_rows_are_stochastic() {
        let env = random_momdp(5, 3, 2, 7);
        for s in 0..5 {
            for a in 0..3 {
                let sum: f64 = env.transition_row(s, a).iter().sum();
                assert!((sum - 1.0).abs() <= 1e-12);
            }
        }
    }
}
