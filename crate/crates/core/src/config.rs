//! Experiment documents: an instance (generated or explicit), step sizes
//! (explicit or by recipe), scheduler and stopping rule.

use serde::{Deserialize, Serialize};

use crate::asynch::SchedulerConfig;
use crate::benchmarks::{gen_cournot, gen_demand_response, CournotConfig, DemandResponseConfig};
use crate::error::{GneError, Result};
use crate::graph::CommGraph;
use crate::model::{estimate_constants, GameSpec, MonotonicityConstants, PlayerSpec};
use crate::stepsizes::{default_recipe, probs_from_rates, probs_with_min, uniform_probs, RecipeOptions, StepSizes};
use crate::sync::StopRule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BenchmarkSpec {
    Cournot(CournotConfig),
    DemandResponse(DemandResponseConfig),
}

impl BenchmarkSpec {
    pub fn seed(&self) -> u64 {
        match self {
            BenchmarkSpec::Cournot(c) => c.seed,
            BenchmarkSpec::DemandResponse(c) => c.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            BenchmarkSpec::Cournot(c) => c.seed = seed,
            BenchmarkSpec::DemandResponse(c) => c.seed = seed,
        }
    }
}

/// A game given by its data; the pseudogradient is `matrix x + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitGame {
    pub q: usize,
    pub players: Vec<PlayerSpec<f64>>,
    /// Row-major `n x n`.
    pub matrix: Vec<f64>,
    pub offset: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub nodes: usize,
    pub edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ProbSpec {
    #[default]
    Uniform,
    /// Player 0 activates with `p_min`, the rest share the remainder.
    PMin(f64),
    Explicit(Vec<f64>),
    /// Poisson clock rates.
    Rates(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecipeSpec {
    pub alpha: f64,
    pub tau_fraction: f64,
    pub eps: usize,
    pub probs: ProbSpec,
}

impl Default for RecipeSpec {
    fn default() -> Self {
        let o = RecipeOptions::default();
        RecipeSpec { alpha: o.alpha, tau_fraction: o.tau_fraction, eps: 0, probs: ProbSpec::Uniform }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<BenchmarkSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub game: Option<ExplicitGame>,
    /// Required with `game`; replaces the generated graph of a benchmark.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<StepSizes<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipe: Option<RecipeSpec>,
    #[serde(default)]
    pub scheduler: SchedulerConfig,
    pub stop: StopRule,
}

/// A resolved experiment.
#[derive(Debug, Clone)]
pub struct Instance {
    pub game: GameSpec<f64>,
    pub graph: CommGraph,
    pub consts: MonotonicityConstants<f64>,
    pub steps: StepSizes<f64>,
    pub scheduler: SchedulerConfig,
    pub stop: StopRule,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| GneError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn check(&self) -> Result<()> {
        match (&self.benchmark, &self.game) {
            (Some(_), Some(_)) => return Err(GneError::Config("give either `benchmark` or `game`, not both".into())),
            (None, None) => return Err(GneError::Config("missing field `benchmark` or `game`".into())),
            (None, Some(_)) if self.graph.is_none() => {
                return Err(GneError::Config("an explicit `game` needs a `graph`".into()))
            }
            _ => {}
        }
        match (&self.steps, &self.recipe) {
            (Some(_), Some(_)) => Err(GneError::Config("give either `steps` or `recipe`, not both".into())),
            (None, None) => Err(GneError::Config("missing field `steps` or `recipe`".into())),
            _ => Ok(()),
        }
    }

    /// Seeds the generator (if any) and the scheduler.
    pub fn with_seed(mut self, seed: u64) -> Self {
        if let Some(b) = self.benchmark.as_mut() {
            b.set_seed(seed);
        }
        self.scheduler.seed = seed;
        self
    }

    /// Builds the game, graph and step sizes.
    pub fn resolve(&self) -> Result<Instance> {
        self.check()?;
        let (game, mut graph) = match (&self.benchmark, &self.game) {
            (Some(BenchmarkSpec::Cournot(c)), _) => {
                let inst = gen_cournot(c)?;
                (inst.game, inst.graph)
            }
            (Some(BenchmarkSpec::DemandResponse(c)), _) => {
                let inst = gen_demand_response(c)?;
                (inst.game, inst.graph)
            }
            (None, Some(g)) => {
                let mut b = GameSpec::builder(g.q);
                for p in &g.players {
                    b = b.player(p.clone());
                }
                (b.affine(g.matrix.clone(), g.offset.clone()).build()?, CommGraph::path(1)?)
            }
            (None, None) => unreachable!("checked above"),
        };
        if let Some(gs) = &self.graph {
            graph = CommGraph::new(gs.nodes, &gs.edges)?;
        }
        if graph.node_count() != game.player_count() {
            return Err(GneError::Config(format!(
                "graph has {} nodes but the game has {} players",
                graph.node_count(),
                game.player_count()
            )));
        }
        let consts = estimate_constants(&game)?;
        let steps = match (&self.steps, &self.recipe) {
            (Some(s), _) => {
                s.check_shape(game.player_count(), graph.edge_count())?;
                s.clone()
            }
            (None, Some(r)) => {
                let m = game.player_count();
                let probs = match &r.probs {
                    ProbSpec::Uniform => uniform_probs(m),
                    ProbSpec::PMin(p) => probs_with_min(m, *p)?,
                    ProbSpec::Explicit(p) => p.clone(),
                    ProbSpec::Rates(z) => probs_from_rates(z)?,
                };
                let opts = RecipeOptions { alpha: r.alpha, tau_fraction: r.tau_fraction };
                default_recipe(&game, &graph, &consts, probs, r.eps, opts)?
            }
            (None, None) => unreachable!("checked above"),
        };
        Ok(Instance { game, graph, consts, steps, scheduler: self.scheduler, stop: self.stop })
    }
}

impl Instance {
    /// Self-contained document reproducing this instance without generators.
    pub fn to_explicit_config(&self) -> Result<Config> {
        let aff = self.game.affine().ok_or(GneError::NonAffine)?;
        Ok(Config {
            benchmark: None,
            game: Some(ExplicitGame {
                q: self.game.q(),
                players: self.game.players().to_vec(),
                matrix: aff.matrix.clone(),
                offset: aff.offset.clone(),
            }),
            graph: Some(GraphSpec { nodes: self.graph.node_count(), edges: self.graph.edges().to_vec() }),
            steps: Some(self.steps.clone()),
            recipe: None,
            scheduler: self.scheduler,
            stop: self.stop,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const COURNOT: &str = r#"{
        "benchmark": {"kind": "cournot", "seed": 3},
        "recipe": {"eps": 5},
        "stop": {"tol": 1e-3, "max_iter": 1000}
    }"#;

    #[test]
    fn parses_benchmark_with_recipe() {
        let cfg = Config::from_json(COURNOT).unwrap();
        assert_eq!(cfg.benchmark.as_ref().unwrap().seed(), 3);
        assert_eq!(cfg.stop.record_every, 1);
        let inst = cfg.resolve().unwrap();
        assert_eq!(inst.steps.eps, 5);
        assert_eq!(inst.game.player_count(), 10);
    }

    #[test]
    fn round_trip_is_field_identical() {
        let cfg = Config::from_json(COURNOT).unwrap();
        assert_eq!(Config::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn explicit_export_reproduces_instance() {
        let inst = Config::from_json(COURNOT).unwrap().resolve().unwrap();
        let doc = inst.to_explicit_config().unwrap().to_json();
        let back = Config::from_json(&doc).unwrap().resolve().unwrap();
        assert_eq!(back.game.players(), inst.game.players());
        assert_eq!(back.game.affine(), inst.game.affine());
        assert_eq!(back.graph, inst.graph);
        assert_eq!(back.steps, inst.steps);
    }

    #[test]
    fn structural_errors() {
        assert!(Config::from_json(r#"{"recipe": {}, "stop": {"tol": 1, "max_iter": 1}}"#).is_err());
        assert!(Config::from_json(r#"{"benchmark": {"kind": "cournot"}, "recipe": {}}"#).is_err());
        let unknown = r#"{"benchmark": {"kind": "cournot", "bogus": 1}, "recipe": {}, "stop": {"tol": 1, "max_iter": 1}}"#;
        assert!(Config::from_json(unknown).is_err());
        let both = r#"{"benchmark": {"kind": "cournot"}, "recipe": {}, "steps": {"alpha": [], "kappa": [], "sigma": [], "tau": [], "eta": 1, "probs": [], "eps": 0}, "stop": {"tol": 1, "max_iter": 1}}"#;
        assert!(Config::from_json(both).is_err());
    }

    #[test]
    fn p_min_and_seed_override() {
        let doc = r#"{"benchmark": {"kind": "demand-response"}, "recipe": {"probs": {"p-min": 0.1}},
                      "stop": {"tol": 1e-3, "max_iter": 10}}"#;
        let cfg = Config::from_json(doc).unwrap().with_seed(9);
        assert_eq!(cfg.scheduler.seed, 9);
        let inst = cfg.resolve().unwrap();
        assert_eq!(inst.steps.probs[0], 0.1);
    }
}
