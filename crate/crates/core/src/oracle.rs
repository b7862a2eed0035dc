//! Synthetic analytical user.
//!
//! Selection time blends a novice path (visual search + pointing) with an
//! expert path (recall + pointing). The blend weight is a per-item
//! expertise that grows with every selection of the item and decays by
//! `rho` per elapsed trial, so recent practice helps most.

use serde::{Deserialize, Serialize};

use crate::dataset::{MenuSpec, Organization, SelectionSequence, Trial};
use crate::error::{Error, Result};
use crate::eval::r_squared;
use crate::numkit::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    /// Fitts intercept (s).
    pub a_f: f64,
    /// Fitts slope (s/bit).
    pub b_f: f64,
    /// Unordered scan cost per item (s).
    pub c_u: f64,
    /// Alphabetical decision intercept (s).
    pub a_h: f64,
    /// Alphabetical decision slope (s/bit).
    pub b_h: f64,
    /// Semantic search as a fraction of unordered search.
    pub sem_factor: f64,
    /// Per-trial activation decay, in (0, 1).
    pub rho: f64,
    /// Activation at which expertise reaches 1/2.
    pub kappa: f64,
    /// Expert recall time (s).
    pub t_recall: f64,
    /// Log-normal noise scale.
    pub sigma: f64,
    pub item_height: f64,
}

impl Default for OracleParams {
    fn default() -> Self {
        Self {
            a_f: 0.15,
            b_f: 0.12,
            c_u: 0.25,
            a_h: 0.10,
            b_h: 0.15,
            sem_factor: 0.6,
            rho: 0.92,
            kappa: 1.0,
            t_recall: 0.2,
            sigma: 0.15,
            item_height: 1.0,
        }
    }
}

impl OracleParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("a_f", self.a_f),
            ("c_u", self.c_u),
            ("a_h", self.a_h),
            ("sem_factor", self.sem_factor),
            ("kappa", self.kappa),
            ("t_recall", self.t_recall),
            ("item_height", self.item_height),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("b_f", self.b_f), ("b_h", self.b_h), ("sigma", self.sigma)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Domain(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Domain(format!("rho must be in (0, 1), got {}", self.rho)));
        }
        Ok(())
    }
}

/// Per-item activation with lazy decay.
#[derive(Debug, Clone, PartialEq)]
pub struct UserMemory {
    activation: Vec<f64>,
    last_update_trial: Vec<usize>,
    rho: f64,
}

impl UserMemory {
    pub fn new(n: usize, rho: f64) -> Self {
        Self {
            activation: vec![0.0; n],
            last_update_trial: vec![0; n],
            rho,
        }
    }

    /// Activation of `item` as seen at `current_trial`.
    pub fn activation(&self, item: usize, current_trial: usize) -> f64 {
        let a = self.activation[item];
        if a == 0.0 {
            return 0.0;
        }
        let gap = current_trial.saturating_sub(self.last_update_trial[item]);
        a * self.rho.powi(gap as i32)
    }

    pub fn record_selection(&mut self, item: usize, trial: usize) {
        self.activation[item] = self.activation(item, trial) + 1.0;
        self.last_update_trial[item] = trial;
    }
}

/// `A / (A + kappa)` where `A` sums `rho^(current - s)` over past selections.
pub fn expertise(memory: &UserMemory, item: usize, current_trial: usize, kappa: f64) -> f64 {
    let a = memory.activation(item, current_trial);
    a / (a + kappa)
}

/// Pointing time to the item at 1-based `position`; distance is
/// `position × item_height` and width `item_height`.
pub fn fitts_time(position: usize, p: &OracleParams) -> Result<f64> {
    if position < 1 {
        return Err(Error::Domain("positions are 1-based".into()));
    }
    let distance = position as f64 * p.item_height;
    Ok(p.a_f + p.b_f * (distance / p.item_height + 1.0).log2())
}

pub fn search_time(org: Organization, n: usize, p: &OracleParams) -> f64 {
    let unordered = p.c_u * (n as f64 + 1.0) / 2.0;
    match org {
        Organization::Unordered => unordered,
        Organization::Alphabetical => p.a_h + p.b_h * (n as f64 + 1.0).log2(),
        Organization::Semantic => p.sem_factor * unordered,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialTime {
    pub noiseless: f64,
    pub observed: f64,
}

/// Time for selecting item `target` (0-based) at trial `current_trial`;
/// records the selection in `memory` afterwards.
///
/// One standard normal is drawn per call regardless of `sigma`, so corpora
/// that differ only in `sigma` share their noise draws.
pub fn trial_time(
    memory: &mut UserMemory,
    target: usize,
    current_trial: usize,
    org: Organization,
    n: usize,
    p: &OracleParams,
    rng: &mut RngStream,
) -> Result<TrialTime> {
    let e = expertise(memory, target, current_trial, p.kappa);
    let pointing = fitts_time(target + 1, p)?;
    let search = search_time(org, n, p);
    let noiseless = e * (p.t_recall + pointing) + (1.0 - e) * (search + pointing);
    let z = rng.standard_normal();
    let observed = noiseless * (p.sigma * z).exp();
    memory.record_selection(target, current_trial);
    Ok(TrialTime { noiseless, observed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentDesign {
    pub n: usize,
    pub organization: Organization,
    pub blocks: usize,
    pub users: usize,
    /// Seeds the menu; users draw from streams derived from it.
    pub seed: u64,
}

impl ExperimentDesign {
    pub fn is_standard_length(&self) -> bool {
        matches!(self.n, 8 | 12 | 16)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > crate::dataset::MAX_MENU_LEN {
            return Err(Error::Domain(format!("menu length {} not in 1..=64", self.n)));
        }
        if self.blocks == 0 {
            return Err(Error::Domain("blocks must be >= 1".into()));
        }
        Ok(())
    }

    pub fn menu(&self) -> MenuSpec {
        build_menu(self.n, self.organization, self.seed)
    }
}

const MENU_STREAM: u64 = 0;
const USER_STREAM_BASE: u64 = 1;

/// Country names grouped by region; regions serve as semantic categories.
const NAME_POOL: &[(&str, &[&str])] = &[
    (
        "africa",
        &[
            "Algeria", "Angola", "Botswana", "Cameroon", "Chad", "Egypt", "Ethiopia", "Ghana",
            "Kenya", "Libya", "Mali", "Morocco", "Namibia", "Niger", "Nigeria", "Rwanda",
            "Senegal", "Somalia", "South Africa", "Sudan", "Tanzania", "Tunisia", "Uganda",
            "Zambia", "Zimbabwe",
        ],
    ),
    (
        "asia",
        &[
            "Bangladesh", "Bhutan", "Cambodia", "China", "India", "Indonesia", "Iran", "Iraq",
            "Israel", "Japan", "Jordan", "Kazakhstan", "Laos", "Malaysia", "Mongolia", "Nepal",
            "North Korea", "Oman", "Pakistan", "Philippines", "Qatar", "Saudi Arabia",
            "Singapore", "South Korea", "Sri Lanka", "Thailand", "Vietnam",
        ],
    ),
    (
        "europe",
        &[
            "Austria", "Belgium", "Croatia", "Denmark", "Estonia", "Finland", "France",
            "Germany", "Greece", "Hungary", "Iceland", "Ireland", "Italy", "Latvia",
            "Lithuania", "Norway", "Poland", "Portugal", "Romania", "Spain", "Sweden",
            "Switzerland", "Ukraine", "United Kingdom",
        ],
    ),
    (
        "north america",
        &[
            "Bahamas", "Barbados", "Belize", "Canada", "Costa Rica", "Cuba", "Dominica",
            "El Salvador", "Grenada", "Guatemala", "Haiti", "Honduras", "Jamaica", "Mexico",
            "Nicaragua", "Panama", "Trinidad and Tobago", "United States",
        ],
    ),
    (
        "south america",
        &[
            "Argentina", "Bolivia", "Brazil", "Chile", "Colombia", "Ecuador", "Guyana",
            "Paraguay", "Peru", "Suriname", "Uruguay", "Venezuela",
        ],
    ),
    (
        "oceania",
        &[
            "Australia", "Fiji", "Kiribati", "Marshall Islands", "Micronesia", "Nauru",
            "New Zealand", "Palau", "Papua New Guinea", "Samoa", "Solomon Islands", "Tonga",
            "Tuvalu", "Vanuatu",
        ],
    ),
];

/// Every name the generator can place in a menu.
pub fn name_pool() -> Vec<&'static str> {
    NAME_POOL.iter().flat_map(|(_, names)| names.iter().copied()).collect()
}

/// Fixed menu for a design. Unordered menus are shuffled, alphabetical
/// ones sorted, semantic ones grouped by region (about four per group).
pub fn build_menu(n: usize, org: Organization, seed: u64) -> MenuSpec {
    let mut rng = RngStream::derive(seed, MENU_STREAM);
    let items: Vec<String> = match org {
        Organization::Unordered | Organization::Alphabetical => {
            let mut pool = name_pool();
            rng.shuffle(&mut pool);
            let mut chosen: Vec<String> = pool[..n].iter().map(|s| s.to_string()).collect();
            if org == Organization::Alphabetical {
                chosen.sort();
            }
            chosen
        }
        Organization::Semantic => {
            let groups = ((n + 2) / 4).clamp(1, NAME_POOL.len());
            let mut regions: Vec<usize> = (0..NAME_POOL.len()).collect();
            rng.shuffle(&mut regions);
            let mut items = Vec::with_capacity(n);
            for (g, &region) in regions[..groups].iter().enumerate() {
                let size = n / groups + usize::from(g < n % groups);
                let mut names: Vec<&str> = NAME_POOL[region].1.to_vec();
                rng.shuffle(&mut names);
                items.extend(names[..size].iter().map(|s| s.to_string()));
            }
            items
        }
    };
    MenuSpec {
        menu_id: format!("{}{}-{:08x}", org.code(), n, seed as u32),
        organization: org,
        items,
    }
}

/// One user's trials on the design's menu: `blocks` passes, each a fresh
/// random permutation of all items.
pub fn generate_user_sequence(
    design: &ExperimentDesign,
    user_id: &str,
    user_seed: u64,
    p: &OracleParams,
) -> Result<SelectionSequence> {
    design.validate()?;
    p.validate()?;
    let menu = design.menu();
    let n = menu.n();
    let mut rng = RngStream::derive(design.seed, USER_STREAM_BASE.wrapping_add(user_seed));
    let mut memory = UserMemory::new(n, p.rho);
    let mut trials = Vec::with_capacity(design.blocks * n);
    let mut order: Vec<usize> = (0..n).collect();
    for block in 1..=design.blocks {
        rng.shuffle(&mut order);
        for &target in &order {
            let t = trial_time(&mut memory, target, trials.len(), menu.organization, n, p, &mut rng)?;
            trials.push(Trial {
                block_index: block,
                target_index: target,
                observed_time: t.observed,
                noiseless_time: Some(t.noiseless),
            });
        }
    }
    Ok(SelectionSequence {
        user_id: user_id.to_string(),
        menu,
        trials,
    })
}

/// One design per (n, organization) pair; `users` are dealt round-robin.
pub fn mixed_designs(
    ns: &[usize],
    orgs: &[Organization],
    users: usize,
    blocks: usize,
    master_seed: u64,
) -> Vec<ExperimentDesign> {
    let configs: Vec<(usize, Organization)> =
        ns.iter().flat_map(|&n| orgs.iter().map(move |&o| (n, o))).collect();
    let mut seeder = RngStream::derive(master_seed, u64::MAX);
    configs
        .iter()
        .enumerate()
        .map(|(i, &(n, organization))| ExperimentDesign {
            n,
            organization,
            blocks,
            users: users / configs.len() + usize::from(i < users % configs.len()),
            seed: rand::RngCore::next_u64(&mut seeder),
        })
        .collect()
}

/// All users of all designs, ids `u0000`, `u0001`, … in design order.
pub fn generate_corpus(designs: &[ExperimentDesign], p: &OracleParams) -> Result<Vec<SelectionSequence>> {
    let mut out = Vec::new();
    for design in designs {
        for u in 0..design.users {
            let id = format!("u{:04}", out.len());
            out.push(generate_user_sequence(design, &id, u as u64, p)?);
        }
    }
    Ok(out)
}

/// Mean over sequences of R²(observed, noiseless).
pub fn oracle_ceiling_r2(seqs: &[SelectionSequence]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for s in seqs {
        let noiseless = noiseless_times(s)?;
        match r_squared(&s.observed(), &noiseless) {
            Ok(r) => {
                total += r;
                count += 1;
            }
            Err(e) => log::warn!("ceiling: skipping sequence of `{}`: {e}", s.user_id),
        }
    }
    if count == 0 {
        return Err(Error::UndefinedR2("no sequence with defined R²".into()));
    }
    Ok(total / count as f64)
}

pub fn noiseless_times(s: &SelectionSequence) -> Result<Vec<f64>> {
    s.trials
        .iter()
        .map(|t| {
            t.noiseless_time.ok_or_else(|| {
                Error::Validation(format!("sequence of `{}` lacks noiseless times", s.user_id))
            })
        })
        .collect()
}
