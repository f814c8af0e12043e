//! Patient-trajectory simulation and daily occupancy accumulation.
//!
//! Resources are demand counters, not capacities: patients never queue, so a
//! run is a set of independent trajectories whose resource intervals are
//! binned into a daily census taken at midday (`t + 0.5`).

use std::collections::BTreeSet;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{
    canonical_graph, canonical_space, DurationBinding, ParamSpace, ParamVector, ProbBinding, Resource, State,
    StateGraph, IDX_GAMMA_SHAPE, IDX_GAMMA_TRANSLATION, IDX_RISK_A, IDX_RISK_B, IDX_RISK_MALE,
};
use crate::stochastic::{self, DurationSpec, Purpose, SeedSpec, DEFAULT_CAP_FACTOR};

/// Floor left on the complement edge when risk scaling saturates a state.
pub const COMPLEMENT_FLOOR: f64 = 1e-6;

/// Age of the reference patient used to anchor risk scaling.
pub const REFERENCE_AGE: f64 = 50.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Patient {
    pub id: u64,
    /// Day index relative to the start of the case window.
    pub infection_day: usize,
    pub age: f64,
    pub gender: Gender,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrivalSchedule {
    horizon: usize,
    patients: Vec<Patient>,
}

impl ArrivalSchedule {
    pub fn new(horizon: usize, mut patients: Vec<Patient>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for p in &patients {
            if p.infection_day >= horizon {
                return Err(Error::Simulation(format!(
                    "patient {} arrives on day {} beyond horizon {horizon}",
                    p.id, p.infection_day
                )));
            }
            if !ids.insert(p.id) {
                return Err(Error::Simulation(format!("duplicate patient id {}", p.id)));
            }
            if !(p.age >= 0.0) {
                return Err(Error::Simulation(format!("patient {} has negative age", p.id)));
            }
        }
        patients.sort_by_key(|p| (p.infection_day, p.id));
        Ok(ArrivalSchedule { horizon, patients })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn patients(&self) -> &[Patient] {
        &self.patients
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn on_day(&self, day: usize) -> impl Iterator<Item = &Patient> {
        self.patients.iter().filter(move |p| p.infection_day == day)
    }

    /// Number of arrivals on each day.
    pub fn daily_counts(&self) -> Vec<usize> {
        let mut out = vec![0; self.horizon];
        for p in &self.patients {
            out[p.infection_day] += 1;
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceInterval {
    pub resource: Resource,
    pub start: f64,
    pub end: f64,
}

/// Days `t` whose census instant `t + 0.5` lies in `[start, end)`, clipped to `[0, horizon)`.
pub fn census_days(start: f64, end: f64, horizon: usize) -> std::ops::Range<usize> {
    let first = (start - 0.5).ceil().max(0.0);
    let past = (end - 0.5).ceil().max(0.0);
    let first = (first as usize).min(horizon);
    let past = (past as usize).min(horizon);
    first..past.max(first)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayCounts {
    pub bed: u32,
    pub icu: u32,
    pub vent: u32,
}

impl DayCounts {
    pub fn get(&self, r: Resource) -> u32 {
        match r {
            Resource::Bed => self.bed,
            Resource::Icu => self.icu,
            Resource::Vent => self.vent,
        }
    }

    fn from_slots(s: [u32; 3]) -> Self {
        DayCounts {
            bed: s[0],
            icu: s[1],
            vent: s[2],
        }
    }
}

/// Daily required resources, one entry per simulated day.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancyTrace {
    pub days: Vec<DayCounts>,
}

impl OccupancyTrace {
    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn get(&self, r: Resource, t: usize) -> u32 {
        self.days[t].get(r)
    }

    /// Writes `day,bed,icu,vent` rows for days in `range`.
    pub fn write_csv<W: Write>(&self, out: W, range: std::ops::Range<usize>) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["day", "bed", "icu", "vent"]).map_err(csv_io)?;
        for t in range {
            let d = self.days[t];
            w.write_record([t.to_string(), d.bed.to_string(), d.icu.to_string(), d.vent.to_string()])
                .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Expected daily counts from path enumeration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectedOccupancy {
    pub days: Vec<[f64; 3]>,
}

impl ExpectedOccupancy {
    pub fn get(&self, r: Resource, t: usize) -> f64 {
        self.days[t][r.slot()]
    }
}

/// How edge durations are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DurationMode {
    /// Truncated, translated gamma with shape x13 and translation x29.
    Gamma,
    /// Every duration equals its parameter value (the infinite-shape limit).
    Deterministic,
}

#[derive(Clone, Debug)]
pub struct Simulator {
    space: ParamSpace,
    graph: StateGraph,
    reference_risk: f64,
    pub durations: DurationMode,
    pub cap_factor: f64,
}

/// Per-vector precomputation shared by every patient of a run.
struct Prepared<'a> {
    x: &'a ParamVector,
    durations: Vec<Option<DurationSpec>>,
}

impl Simulator {
    pub fn new(space: ParamSpace, graph: StateGraph) -> Self {
        let reference_risk = space.reference_risk();
        Simulator {
            space,
            graph,
            reference_risk,
            durations: DurationMode::Gamma,
            cap_factor: DEFAULT_CAP_FACTOR,
        }
    }

    pub fn canonical() -> Self {
        Self::new(canonical_space(), canonical_graph())
    }

    pub fn with_durations(mut self, mode: DurationMode) -> Self {
        self.durations = mode;
        self
    }

    pub fn space(&self) -> &ParamSpace {
        &self.space
    }

    pub fn graph(&self) -> &StateGraph {
        &self.graph
    }

    pub fn reference_risk(&self) -> f64 {
        self.reference_risk
    }

    /// `x25 * exp(x26 * age)`, times `x27` for men.
    pub fn assign_risk(&self, p: &Patient, x: &ParamVector) -> f64 {
        assign_risk(p, x)
    }

    /// Outgoing distribution of `state` for this patient, aligned with
    /// `graph.outgoing(state)`.
    pub fn effective_probs(&self, state: State, p: &Patient, x: &ParamVector) -> Vec<f64> {
        let factor = assign_risk(p, x) / self.reference_risk;
        scaled_probs(&self.graph, state, x, factor)
    }

    fn prepare<'a>(&self, x: &'a ParamVector) -> Result<Prepared<'a>> {
        let violations = self.space.validate_vector(&self.graph, x);
        if !violations.is_empty() {
            let msg: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(Error::Simulation(format!(
                "invalid parameter vector: {}",
                msg.join("; ")
            )));
        }
        let shape = x.at(IDX_GAMMA_SHAPE);
        let translation = x.at(IDX_GAMMA_TRANSLATION);
        let durations = self
            .graph
            .edges()
            .iter()
            .map(|e| match e.duration {
                DurationBinding::Instantaneous => Ok(None),
                DurationBinding::Param(i) => {
                    DurationSpec::with_cap_factor(x.at(i), shape, translation, self.cap_factor).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Prepared { x, durations })
    }

    fn draw_duration<R: Rng + ?Sized>(&self, spec: &Option<DurationSpec>, rng: &mut R) -> f64 {
        match (spec, self.durations) {
            (None, _) => 0.0,
            (Some(s), DurationMode::Deterministic) => s.mean,
            (Some(s), DurationMode::Gamma) => stochastic::sample_duration(s, rng),
        }
    }

    fn walk<R: Rng + ?Sized>(&self, prep: &Prepared, p: &Patient, rng: &mut R) -> Vec<ResourceInterval> {
        let factor = assign_risk(p, prep.x) / self.reference_risk;
        let mut out = Vec::new();
        let mut state = State::Infected;
        let mut t = p.infection_day as f64;
        while !state.is_absorbing() {
            let probs = scaled_probs(&self.graph, state, prep.x, factor);
            let choice = stochastic::categorical_unchecked(&probs, rng);
            let (edge_idx, edge) = self
                .graph
                .outgoing(state)
                .nth(choice)
                .expect("choice within outgoing edges");
            let d = self.draw_duration(&prep.durations[edge_idx], rng);
            if let Some(resource) = state.resource() {
                if d > 0.0 {
                    out.push(ResourceInterval {
                        resource,
                        start: t,
                        end: t + d,
                    });
                }
            }
            t += d;
            state = edge.to;
        }
        out
    }

    /// One trajectory from `Infected` to an absorbing state.
    pub fn simulate_patient<R: Rng + ?Sized>(
        &self,
        p: &Patient,
        x: &ParamVector,
        rng: &mut R,
    ) -> Result<Vec<ResourceInterval>> {
        let prep = self.prepare(x)?;
        Ok(self.walk(&prep, p, rng))
    }

    /// Daily occupancy for every patient in `arrivals`. Each patient draws from
    /// its own stream keyed by `(master_seed, patient id)`, so the result does
    /// not depend on how patients are split across threads.
    pub fn simulate(&self, arrivals: &ArrivalSchedule, x: &ParamVector, master_seed: u64) -> Result<OccupancyTrace> {
        let prep = self.prepare(x)?;
        let horizon = arrivals.horizon();
        let counts = arrivals
            .patients()
            .par_iter()
            .fold(
                || vec![[0u32; 3]; horizon],
                |mut acc, p| {
                    let mut rng = stochastic::derive_stream(&SeedSpec::new(master_seed, Purpose::Patient, p.id, 0));
                    for iv in self.walk(&prep, p, &mut rng) {
                        for t in census_days(iv.start, iv.end, horizon) {
                            acc[t][iv.resource.slot()] += 1;
                        }
                    }
                    acc
                },
            )
            .reduce(
                || vec![[0u32; 3]; horizon],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(b) {
                        for k in 0..3 {
                            x[k] += y[k];
                        }
                    }
                    a
                },
            );
        Ok(OccupancyTrace {
            days: counts.into_iter().map(DayCounts::from_slots).collect(),
        })
    }

    /// Exact expected occupancy by enumerating every root-to-absorbing path.
    /// Only defined with deterministic durations.
    pub fn expected_occupancy(&self, arrivals: &ArrivalSchedule, x: &ParamVector) -> Result<ExpectedOccupancy> {
        if self.durations != DurationMode::Deterministic {
            return Err(Error::Simulation("oracle requires deterministic durations".into()));
        }
        let prep = self.prepare(x)?;
        let horizon = arrivals.horizon();
        let mut days = vec![[0.0f64; 3]; horizon];
        for p in arrivals.patients() {
            let factor = assign_risk(p, x) / self.reference_risk;
            self.enumerate(&prep, factor, State::Infected, p.infection_day as f64, 1.0, &mut days);
        }
        Ok(ExpectedOccupancy { days })
    }

    fn enumerate(&self, prep: &Prepared, factor: f64, state: State, t: f64, prob: f64, days: &mut [[f64; 3]]) {
        if state.is_absorbing() || prob == 0.0 {
            return;
        }
        let probs = scaled_probs(&self.graph, state, prep.x, factor);
        for ((edge_idx, edge), p) in self.graph.outgoing(state).zip(probs) {
            if p <= 0.0 {
                continue;
            }
            let d = prep.durations[edge_idx].map_or(0.0, |s| s.mean);
            if let Some(r) = state.resource() {
                for day in census_days(t, t + d, days.len()) {
                    days[day][r.slot()] += prob * p;
                }
            }
            self.enumerate(prep, factor, edge.to, t + d, prob * p, days);
        }
    }
}

pub fn assign_risk(p: &Patient, x: &ParamVector) -> f64 {
    let base = x.at(IDX_RISK_A) * (x.at(IDX_RISK_B) * p.age).exp();
    match p.gender {
        Gender::Male => base * x.at(IDX_RISK_MALE),
        Gender::Female => base,
    }
}

/// Scales risk-sensitive explicit edges by `factor`; the complement absorbs the rest.
fn scaled_probs(graph: &StateGraph, state: State, x: &[f64], factor: f64) -> Vec<f64> {
    let mut probs = Vec::with_capacity(4);
    let mut complement_at = None;
    let mut base_explicit = 0.0;
    let mut explicit = 0.0;
    for (k, (_, e)) in graph.outgoing(state).enumerate() {
        match e.prob {
            ProbBinding::Param(i) => {
                let base = x[i - 1];
                let p = if e.risk_sensitive { base * factor } else { base };
                base_explicit += base;
                explicit += p;
                probs.push(p);
            }
            ProbBinding::Complement => {
                complement_at = Some(k);
                probs.push(0.0);
            }
        }
    }
    let cap = (1.0 - COMPLEMENT_FLOOR).max(base_explicit.min(1.0));
    if explicit > cap {
        let s = cap / explicit;
        for (k, p) in probs.iter_mut().enumerate() {
            if Some(k) != complement_at {
                *p *= s;
            }
        }
        explicit = cap;
    }
    if let Some(k) = complement_at {
        probs[k] = (1.0 - explicit).max(0.0);
    }
    probs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastic::stream;

    fn patient(age: f64, gender: Gender) -> Patient {
        Patient {
            id: 0,
            infection_day: 0,
            age,
            gender,
        }
    }

    #[test]
    fn census_rule() {
        assert_eq!(census_days(2.2, 5.9, 10), 2..6);
        assert_eq!(census_days(2.6, 2.9, 10), 3..3);
        assert_eq!(census_days(0.0, 100.0, 10), 0..10);
    }

    #[test]
    fn risk_examples() {
        let mut x = canonical_space().defaults();
        x.set(26, 0.0);
        let r20 = assign_risk(&patient(20.0, Gender::Female), &x);
        let r80 = assign_risk(&patient(80.0, Gender::Female), &x);
        assert_eq!(r20, x.at(25));
        assert_eq!(r80, x.at(25));
        x.set(27, 1.5);
        x.set(26, 0.03);
        let m = assign_risk(&patient(60.0, Gender::Male), &x);
        let f = assign_risk(&patient(60.0, Gender::Female), &x);
        assert!((m / f - 1.5).abs() < 1e-15);
        x.set(25, 0.01);
        x.set(26, 0.05);
        let r = assign_risk(&patient(60.0, Gender::Female), &x);
        assert!((r - 0.01 * 3f64.exp()).abs() < 1e-15);
        assert!((r - 0.2009).abs() < 1e-4);
    }

    #[test]
    fn reference_patient_keeps_base_probs() {
        let sim = Simulator::canonical();
        let x = sim.space().defaults();
        let p = patient(REFERENCE_AGE, Gender::Female);
        for s in State::ALL.into_iter().filter(|s| !s.is_absorbing()) {
            let eff = sim.effective_probs(s, &p, &x);
            let base = sim.graph().base_probs(s, &x);
            for (a, b) in eff.iter().zip(&base) {
                assert!((a - b).abs() < 1e-12, "{s}");
            }
        }
    }

    #[test]
    fn doubled_risk_at_normal() {
        let g = canonical_graph();
        let mut x = canonical_space().defaults();
        x.set(17, 0.1);
        x.set(18, 0.05);
        x.set(19, 0.05);
        let p = scaled_probs(&g, State::Normal, &x, 2.0);
        let want = [0.2, 0.1, 0.1, 0.6];
        for (a, b) in p.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn extreme_risk_is_clamped() {
        let g = canonical_graph();
        let mut x = canonical_space().defaults();
        x.set(17, 0.1);
        x.set(18, 0.05);
        x.set(19, 0.05);
        let p = scaled_probs(&g, State::Normal, &x, 100.0);
        let explicit: f64 = p[..3].iter().sum();
        assert!((explicit - (1.0 - COMPLEMENT_FLOOR)).abs() < 1e-12);
        assert!((p[3] - COMPLEMENT_FLOOR).abs() < 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // proportions preserved
        assert!((p[0] / p[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn no_admissions_no_intervals() {
        let sim = Simulator::canonical();
        let mut x = sim.space().defaults();
        let mut space = sim.space().entries().to_vec();
        space[13].lower = 0.0;
        let sim = Simulator::new(ParamSpace::new(space).unwrap(), canonical_graph());
        x.set(14, 0.0);
        let mut rng = stream(1, Purpose::Noise, 0, 0);
        for age in [10.0, 50.0, 95.0] {
            let ivs = sim.simulate_patient(&patient(age, Gender::Male), &x, &mut rng).unwrap();
            assert!(ivs.is_empty());
        }
    }

    /// Space whose probability bounds allow forcing a single path.
    pub(crate) fn open_space() -> ParamSpace {
        let mut entries = canonical_space().entries().to_vec();
        for e in entries.iter_mut() {
            if e.role == crate::params::Role::Probability {
                e.lower = 0.0;
                e.upper = 1.0;
            }
        }
        ParamSpace::new(entries).unwrap()
    }

    #[test]
    fn forced_ward_path() {
        let sim = Simulator::new(open_space(), canonical_graph()).with_durations(DurationMode::Deterministic);
        let mut x = sim.space().defaults();
        x.set(14, 1.0);
        for i in [15, 16, 17, 18, 19] {
            x.set(i, 0.0);
        }
        let (d1, d2) = (4.25, 7.5);
        x.set(1, d1);
        x.set(2, d2);
        let mut p = patient(70.0, Gender::Male);
        p.infection_day = 3;
        let ivs = sim
            .simulate_patient(&p, &x, &mut stream(1, Purpose::Noise, 0, 0))
            .unwrap();
        assert_eq!(
            ivs,
            vec![ResourceInterval {
                resource: Resource::Bed,
                start: 3.0 + d1,
                end: 3.0 + d1 + d2
            }]
        );
    }

    #[test]
    fn walks_are_contiguous_and_terminate() {
        let sim = Simulator::canonical();
        let x = sim.space().defaults();
        let mut rng = stream(9, Purpose::Noise, 0, 0);
        for i in 0..5000 {
            let p = patient((i % 100) as f64, if i % 2 == 0 { Gender::Male } else { Gender::Female });
            let ivs = sim.simulate_patient(&p, &x, &mut rng).unwrap();
            for w in ivs.windows(2) {
                assert!(w[1].start >= w[0].end - 1e-12);
            }
            for iv in &ivs {
                assert!(iv.end > iv.start && iv.start >= 0.0);
            }
        }
    }

    fn schedule(n: usize, horizon: usize) -> ArrivalSchedule {
        let patients = (0..n)
            .map(|i| Patient {
                id: i as u64,
                infection_day: i % (horizon / 2),
                age: 20.0 + (i % 70) as f64,
                gender: if i % 3 == 0 { Gender::Male } else { Gender::Female },
            })
            .collect();
        ArrivalSchedule::new(horizon, patients).unwrap()
    }

    #[test]
    fn zero_arrivals_zero_trace() {
        let sim = Simulator::canonical();
        let a = ArrivalSchedule::new(10, vec![]).unwrap();
        let tr = sim.simulate(&a, &sim.space().defaults(), 1).unwrap();
        assert_eq!(tr.len(), 10);
        assert!(tr.days.iter().all(|d| *d == DayCounts::default()));
    }

    #[test]
    fn single_interval_census() {
        // one bed interval [2.2, 5.9): arrival day 0, 2.2 days to hospital, 3.7 days on the ward
        let sim = Simulator::new(open_space(), canonical_graph()).with_durations(DurationMode::Deterministic);
        let mut x = sim.space().defaults();
        x.set(14, 1.0);
        for i in [15, 16, 17, 18, 19] {
            x.set(i, 0.0);
        }
        x.set(1, 2.2);
        x.set(2, 3.7);
        let a = ArrivalSchedule::new(
            10,
            vec![Patient {
                id: 1,
                infection_day: 0,
                age: 40.0,
                gender: Gender::Female,
            }],
        )
        .unwrap();
        let tr = sim.simulate(&a, &x, 5).unwrap();
        let beds: Vec<u32> = tr.days.iter().map(|d| d.bed).collect();
        assert_eq!(beds, vec![0, 0, 1, 1, 1, 1, 0, 0, 0, 0]);
    }

    #[test]
    fn deterministic_replay_and_bounds() {
        let sim = Simulator::canonical();
        let a = schedule(3000, 60);
        let x = sim.space().defaults();
        let t1 = sim.simulate(&a, &x, 11).unwrap();
        let t2 = sim.simulate(&a, &x, 11).unwrap();
        assert_eq!(t1, t2);
        let t3 = sim.simulate(&a, &x, 12).unwrap();
        assert_ne!(t1, t3);
        let counts = a.daily_counts();
        let mut arrived = 0u32;
        for (t, d) in t1.days.iter().enumerate() {
            arrived += counts[t] as u32;
            for r in Resource::ALL {
                assert!(d.get(r) <= arrived);
            }
        }
    }

    #[test]
    fn oracle_requires_deterministic() {
        let sim = Simulator::canonical();
        let a = schedule(10, 20);
        let err = sim
            .expected_occupancy(&a, &sim.space().defaults())
            .unwrap_err()
            .to_string();
        assert!(err.contains("oracle requires deterministic durations"));
    }

    #[test]
    fn oracle_half_admission() {
        // p(Hospital) = 0.5, ward-only, 3-day stay starting day 2
        let sim = Simulator::new(open_space(), canonical_graph()).with_durations(DurationMode::Deterministic);
        let mut x = sim.space().defaults();
        x.set(14, 0.5);
        for i in [15, 16, 17, 18, 19] {
            x.set(i, 0.0);
        }
        x.set(1, 2.0);
        x.set(2, 3.0);
        let a = ArrivalSchedule::new(
            8,
            vec![Patient {
                id: 0,
                infection_day: 0,
                age: 50.0,
                gender: Gender::Female,
            }],
        )
        .unwrap();
        let e = sim.expected_occupancy(&a, &x).unwrap();
        let beds: Vec<f64> = e.days.iter().map(|d| d[0]).collect();
        assert_eq!(beds, vec![0.0, 0.0, 0.5, 0.5, 0.5, 0.0, 0.0, 0.0]);
        assert!(e.days.iter().all(|d| d[1] == 0.0 && d[2] == 0.0));

        x.set(14, 0.0);
        let e = sim.expected_occupancy(&a, &x).unwrap();
        assert!(e.days.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn oracle_matches_single_path_exactly() {
        let sim = Simulator::new(open_space(), canonical_graph()).with_durations(DurationMode::Deterministic);
        let mut x = sim.space().defaults();
        // Infected -> Hospital -> Intensive -> Ventilation -> IntensiveAfter -> Healthy
        x.set(14, 1.0);
        x.set(15, 1.0);
        x.set(16, 0.0);
        x.set(20, 1.0);
        x.set(21, 0.0);
        x.set(22, 1.0);
        x.set(23, 0.0);
        // risk-insensitive: every patient at the reference risk
        x.set(25, sim.space().entry(25).default);
        x.set(26, sim.space().entry(26).default);
        x.set(27, 1.0);
        let patients = (0..50)
            .map(|i| Patient {
                id: i,
                infection_day: (i % 10) as usize,
                age: 50.0,
                gender: Gender::Female,
            })
            .collect();
        let a = ArrivalSchedule::new(60, patients).unwrap();
        let e = sim.expected_occupancy(&a, &x).unwrap();
        let tr = sim.simulate(&a, &x, 3).unwrap();
        for t in 0..60 {
            for r in Resource::ALL {
                assert_eq!(e.get(r, t), tr.get(r, t) as f64, "day {t} {r:?}");
            }
        }
    }

    #[test]
    fn x24_has_no_effect() {
        let sim = Simulator::canonical();
        let a = schedule(2000, 60);
        let mut x = sim.space().defaults();
        let t1 = sim.simulate(&a, &x, 4).unwrap();
        x.set(24, 20.0);
        let t2 = sim.simulate(&a, &x, 4).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn effective_probs_always_distribution() {
        let sim = Simulator::canonical();
        let space = sim.space().clone();
        let mut rng = stream(8, Purpose::Noise, 0, 0);
        let rows = stochastic::lhs_space(50, &space, &mut rng).unwrap();
        for row in rows {
            let x = ParamVector(row);
            for age in [0.0, 30.0, 60.0, 90.0, 120.0] {
                for g in [Gender::Male, Gender::Female] {
                    for s in State::ALL.into_iter().filter(|s| !s.is_absorbing()) {
                        let p = sim.effective_probs(s, &patient(age, g), &x);
                        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
                        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    }
                }
            }
        }
    }
}
