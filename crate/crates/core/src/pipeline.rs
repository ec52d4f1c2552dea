//! File-based pipeline: every stage reads its inputs from and writes its
//! outputs to an artifact directory, followed by a provenance stamp.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autoencoder::{train_autoencoder_stack, AeTrainConfig, AutoencodedModel, ConceptAutoencoder, LossWeights, StackReport};
use crate::bn::{fit_cpds, layered_structure, load_bn, save_bn, CausalBayesNet, EffectVariant, Evidence, Observation, PREDICTION};
use crate::concepts::{self, ConceptId, DiscreteRecord, DiscretizationSpec};
use crate::error::{Error, Result};
use crate::explain::{self, EffectReport, EncodedCorpus, InstanceEffects, Neighbor};
use crate::intervention::{self, InterventionHeader, InterventionRecord, LabeledInput, INTERVENTION_FORMAT};
use crate::io;
use crate::nn::{load_checkpoint, save_checkpoint, LayerSpec, LayeredClassifier};
use crate::synth::{generate_dataset, load_dataset, save_dataset, Dataset, SynthConfig};
use crate::target::{jn6_mini, train_target, TrainConfig, TrainReport};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    pub layers: Vec<LayerSpec>,
    pub train: TrainConfig,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            layers: jn6_mini(1, 2),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderConfig {
    /// Indices of the target layers whose outputs are encoded.
    pub host_layers: Vec<usize>,
    pub weights: LossWeights,
    pub train: AeTrainConfig,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            // after the two pooling layers and the last convolution
            host_layers: vec![4, 9, 13],
            weights: LossWeights::default(),
            train: AeTrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterventionConfig {
    pub probability: f64,
    pub passes: usize,
}

impl Default for InterventionConfig {
    fn default() -> Self {
        Self {
            probability: 0.1,
            passes: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConceptConfig {
    /// Variance threshold as a multiple of the squared largest pooled value.
    pub relative_variance_threshold: f64,
    pub max_per_level: usize,
    pub bins: usize,
}

impl Default for ConceptConfig {
    fn default() -> Self {
        Self {
            relative_variance_threshold: 1e-6,
            max_per_level: 10,
            bins: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BnConfig {
    pub alpha: f64,
}

impl Default for BnConfig {
    fn default() -> Self {
        Self { alpha: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub variant: EffectVariant,
    pub top_k: usize,
    pub neighbors: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            variant: EffectVariant::ExpectedAbs,
            top_k: 5,
            neighbors: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub data: SynthConfig,
    pub target: TargetConfig,
    pub autoencoders: AutoencoderConfig,
    pub interventions: InterventionConfig,
    pub concepts: ConceptConfig,
    pub bn: BnConfig,
    pub explain: ExplainConfig,
    /// Artifact directory; `--out` takes precedence.
    pub artifacts: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            data: SynthConfig::default(),
            target: TargetConfig::default(),
            autoencoders: AutoencoderConfig::default(),
            interventions: InterventionConfig::default(),
            concepts: ConceptConfig::default(),
            bn: BnConfig::default(),
            explain: ExplainConfig::default(),
            artifacts: PathBuf::from("artifacts"),
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = io::read_bytes(path)?;
        serde_json::from_slice(&bytes).map_err(|e| invalid(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate().map_err(|e| invalid(format!("data: {e}")))?;
        let p = self.interventions.probability;
        if !(0.0..=1.0).contains(&p) {
            return Err(invalid(format!("interventions.probability = {p} is outside [0, 1]")));
        }
        if self.interventions.passes == 0 {
            return Err(invalid("interventions.passes must be at least 1"));
        }
        if self.concepts.bins < 2 {
            return Err(invalid(format!("concepts.bins = {} (need k ≥ 2)", self.concepts.bins)));
        }
        if self.concepts.max_per_level == 0 {
            return Err(invalid("concepts.max_per_level must be at least 1"));
        }
        let t = self.concepts.relative_variance_threshold;
        if !(t >= 0.0 && t.is_finite()) {
            return Err(invalid(format!("concepts.relative_variance_threshold = {t}")));
        }
        if !(self.bn.alpha >= 0.0 && self.bn.alpha.is_finite()) {
            return Err(invalid(format!("bn.alpha = {}", self.bn.alpha)));
        }
        self.autoencoders
            .weights
            .validate_for_concepts()
            .map_err(|e| invalid(format!("autoencoders.weights: {e}")))?;
        let mut shape = vec![1, self.data.height, self.data.width];
        for (i, spec) in self.target.layers.iter().enumerate() {
            shape = spec
                .output_shape(&shape)
                .map_err(|e| invalid(format!("target.layers[{i}]: {e}")))?;
        }
        if self.target.layers.last() != Some(&LayerSpec::Softmax) || shape != [2] {
            return Err(invalid("target.layers must end in a two-class softmax"));
        }
        let hosts = &self.autoencoders.host_layers;
        if hosts.is_empty() || hosts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid(format!("autoencoders.host_layers {hosts:?} must be nonempty and increasing")));
        }
        if let Some(&h) = hosts.iter().find(|&&h| h + 1 >= self.target.layers.len()) {
            return Err(invalid(format!("host layer {h} leaves no downstream layers")));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON with the artifact directory blanked,
    /// so relocating the output does not change any artifact.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.artifacts = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    GenData,
    TrainTarget,
    TrainAe,
    Interventions,
    Discretize,
    FitBn,
    Rank,
    ExplainInstance,
    Nn,
    Serve,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::GenData,
        Stage::TrainTarget,
        Stage::TrainAe,
        Stage::Interventions,
        Stage::Discretize,
        Stage::FitBn,
        Stage::Rank,
        Stage::ExplainInstance,
        Stage::Nn,
        Stage::Serve,
    ];

    /// Stages that build the fitted artifacts, in order.
    pub const BUILD: [Stage; 7] = [
        Stage::GenData,
        Stage::TrainTarget,
        Stage::TrainAe,
        Stage::Interventions,
        Stage::Discretize,
        Stage::FitBn,
        Stage::Rank,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::TrainTarget => "train-target",
            Stage::TrainAe => "train-ae",
            Stage::Interventions => "interventions",
            Stage::Discretize => "discretize",
            Stage::FitBn => "fit-bn",
            Stage::Rank => "rank",
            Stage::ExplainInstance => "explain-instance",
            Stage::Nn => "nn",
            Stage::Serve => "serve",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown stage `{s}`")))
    }
}

/// Artifact locations under one output directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    root: PathBuf,
}

impl Artifacts {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn target_dir(&self) -> PathBuf {
        self.root.join("target")
    }

    pub fn target_report(&self) -> PathBuf {
        self.root.join("target-report.json")
    }

    pub fn autoencoder_dir(&self) -> PathBuf {
        self.root.join("autoencoders")
    }

    pub fn autoencoder_report(&self) -> PathBuf {
        self.root.join("autoencoder-report.json")
    }

    pub fn interventions(&self) -> PathBuf {
        self.root.join("interventions.jsonl")
    }

    pub fn discretization(&self) -> PathBuf {
        self.root.join("discretization.json")
    }

    pub fn discrete_records(&self) -> PathBuf {
        self.root.join("discrete.jsonl")
    }

    pub fn bn(&self) -> PathBuf {
        self.root.join("bn.json")
    }

    pub fn rank_text(&self) -> PathBuf {
        self.root.join("rank.txt")
    }

    pub fn rank_json(&self) -> PathBuf {
        self.root.join("rank.json")
    }

    pub fn explain_text(&self, id: usize) -> PathBuf {
        self.root.join("explain").join(format!("instance-{id}.txt"))
    }

    pub fn explain_json(&self, id: usize) -> PathBuf {
        self.root.join("explain").join(format!("instance-{id}.json"))
    }

    pub fn nn_json(&self, concept: ConceptId, id: usize, k: usize) -> PathBuf {
        self.root.join("nn").join(format!("{}-instance-{id}-k{k}.json", concept.name()))
    }

    pub fn provenance(&self, stage: Stage) -> PathBuf {
        self.root.join("provenance").join(format!("{}.json", stage.name()))
    }
}

/// Written next to each stage's outputs. Carries no timestamps so reruns
/// reproduce it byte for byte.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    /// Artifact path relative to the output directory → SHA-256.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(io::read_bytes(path)?)))
}

/// Optional arguments of the query stages.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StageArgs {
    pub instance: Option<usize>,
    pub level: Option<usize>,
    pub channel: Option<usize>,
    pub k: Option<usize>,
    pub variant: Option<EffectVariant>,
}

/// What a stage produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub outputs: Vec<PathBuf>,
    pub summary: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StackManifest {
    host_layers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub instance_id: usize,
    pub label: usize,
    pub predicted: usize,
    pub evidence: BTreeMap<String, usize>,
    pub effects: InstanceEffects,
}

impl InstanceReport {
    pub fn to_text(&self) -> String {
        let width = self.effects.rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
        let mut out = format!(
            "Individual Causal Effect\ninstance {}  label {}  predicted {}\n",
            self.instance_id, self.label, self.predicted
        );
        if self.effects.fell_back_to_prior {
            out.push_str("instance evidence impossible under the net; prior used\n");
        }
        for r in &self.effects.rows {
            out.push_str(&explain::format_row(&r.name, r.effect, width));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborEntry {
    pub id: usize,
    pub distance: f64,
    /// Concept feature map, row-major nested rows.
    pub map: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborReport {
    pub concept: String,
    pub level: usize,
    pub channel: usize,
    pub query: usize,
    pub neighbors: Vec<NeighborEntry>,
}

/// Rows of a `[H, W]`-shaped slice.
pub fn map_rows(map: &[f64], width: usize) -> Vec<Vec<f64>> {
    map.chunks(width).map(<[f64]>::to_vec).collect()
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub artifacts: Artifacts,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, out: Option<PathBuf>) -> Result<Self> {
        config.validate()?;
        let root = out.unwrap_or_else(|| config.artifacts.clone());
        Ok(Self {
            config,
            artifacts: Artifacts::new(root),
        })
    }

    fn stamp(&self, stage: Stage, outputs: &[PathBuf]) -> Result<()> {
        let mut map = BTreeMap::new();
        for p in outputs {
            let rel = p.strip_prefix(self.artifacts.root()).unwrap_or(p);
            if p.is_dir() {
                let mut files: Vec<PathBuf> = walk(p)?;
                files.sort();
                for f in files {
                    let r = f.strip_prefix(self.artifacts.root()).unwrap_or(&f);
                    map.insert(r.to_string_lossy().replace('\\', "/"), sha256_file(&f)?);
                }
            } else {
                map.insert(rel.to_string_lossy().replace('\\', "/"), sha256_file(p)?);
            }
        }
        let prov = Provenance {
            stage: stage.name().into(),
            version: VERSION.into(),
            config_hash: self.config.hash(),
            seed: self.config.seed,
            outputs: map,
        };
        io::write_json(&self.artifacts.provenance(stage), &prov)
    }

    /// Runs one stage. `Serve` is handled by the binary and rejected here.
    pub fn run_stage(&self, stage: Stage, args: &StageArgs) -> Result<StageOutcome> {
        let (outputs, summary) = match stage {
            Stage::GenData => self.gen_data()?,
            Stage::TrainTarget => self.train_target()?,
            Stage::TrainAe => self.train_ae()?,
            Stage::Interventions => self.interventions()?,
            Stage::Discretize => self.discretize()?,
            Stage::FitBn => self.fit_bn()?,
            Stage::Rank => self.rank(args.variant)?,
            Stage::ExplainInstance => self.explain_instance(args)?,
            Stage::Nn => self.nn(args)?,
            Stage::Serve => return Err(Error::InvalidArgument("`serve` is not a batch stage".into())),
        };
        self.stamp(stage, &outputs)?;
        Ok(StageOutcome { stage, outputs, summary })
    }

    /// Every build stage in order.
    pub fn run_all(&self) -> Result<Vec<StageOutcome>> {
        Stage::BUILD
            .iter()
            .map(|&s| self.run_stage(s, &StageArgs::default()))
            .collect()
    }

    fn gen_data(&self) -> Result<(Vec<PathBuf>, String)> {
        let ds = generate_dataset(&self.config.data, self.config.seed)?;
        let dir = self.artifacts.data_dir();
        save_dataset(&dir, &ds)?;
        let figures = ds.instances.iter().filter(|i| i.label == crate::synth::FIGURE).count();
        Ok((
            vec![dir],
            format!("{} instances ({} with figure)", ds.instances.len(), figures),
        ))
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        load_dataset(&self.artifacts.data_dir())
    }

    fn train_target(&self) -> Result<(Vec<PathBuf>, String)> {
        let ds = self.load_dataset()?;
        let (net, report) = train_target(&ds, &self.config.target.layers, &self.config.target.train, self.config.seed)?;
        let dir = self.artifacts.target_dir();
        save_checkpoint(
            &dir,
            net.body(),
            self.config.seed,
            serde_json::to_value(&self.config.target.train)?,
        )?;
        io::write_json(&self.artifacts.target_report(), &report)?;
        Ok((
            vec![dir, self.artifacts.target_report()],
            format!("held-out accuracy {:.4}", report.test_accuracy),
        ))
    }

    pub fn load_target(&self) -> Result<LayeredClassifier> {
        let (body, _) = load_checkpoint(&self.artifacts.target_dir())?;
        LayeredClassifier::new(body)
    }

    pub fn target_report(&self) -> Result<TrainReport> {
        io::read_json(&self.artifacts.target_report())
    }

    fn train_ae(&self) -> Result<(Vec<PathBuf>, String)> {
        let ds = self.load_dataset()?;
        let net = self.load_target()?;
        let train: Vec<_> = ds.train_instances().map(|i| &i.image).collect();
        let heldout: Vec<_> = ds.test_instances().map(|i| &i.image).collect();
        let cfg = &self.config.autoencoders;
        let (stack, report) = train_autoencoder_stack(&net, &train, &heldout, &cfg.host_layers, &cfg.weights, &cfg.train, self.config.seed)?;
        let dir = self.artifacts.autoencoder_dir();
        io::ensure_dir(&dir)?;
        for (level, ae) in stack.iter().enumerate() {
            let hyper = serde_json::json!({ "host_layer": ae.host_layer, "level": level });
            save_checkpoint(&dir.join(format!("level{level}/encoder")), &ae.encoder, self.config.seed, hyper.clone())?;
            save_checkpoint(&dir.join(format!("level{level}/decoder")), &ae.decoder, self.config.seed, hyper)?;
        }
        io::write_json(
            &dir.join("stack.json"),
            &StackManifest {
                host_layers: cfg.host_layers.clone(),
            },
        )?;
        io::write_json(&self.artifacts.autoencoder_report(), &report)?;
        let agreements: Vec<String> = report.levels.iter().map(|l| format!("{:.4}", l.agreement)).collect();
        Ok((
            vec![dir, self.artifacts.autoencoder_report()],
            format!("agreement per level [{}]", agreements.join(", ")),
        ))
    }

    pub fn load_model(&self) -> Result<AutoencodedModel> {
        let net = self.load_target()?;
        let dir = self.artifacts.autoencoder_dir();
        let manifest: StackManifest = io::read_json(&dir.join("stack.json"))?;
        let stack = manifest
            .host_layers
            .iter()
            .enumerate()
            .map(|(level, &host)| {
                let (encoder, _) = load_checkpoint(&dir.join(format!("level{level}/encoder")))?;
                let (decoder, _) = load_checkpoint(&dir.join(format!("level{level}/decoder")))?;
                ConceptAutoencoder::new(host, encoder, decoder)
            })
            .collect::<Result<Vec<_>>>()?;
        AutoencodedModel::new(net, stack)
    }

    pub fn autoencoder_report(&self) -> Result<StackReport> {
        io::read_json(&self.artifacts.autoencoder_report())
    }

    fn interventions(&self) -> Result<(Vec<PathBuf>, String)> {
        let model = self.load_model()?;
        let ds = self.load_dataset()?;
        let inputs: Vec<LabeledInput<'_>> = ds
            .train_instances()
            .map(|i| LabeledInput {
                id: i.id,
                image: &i.image,
                label: i.label,
            })
            .collect();
        let cfg = &self.config.interventions;
        let records = intervention::generate_interventional_dataset(&model, &inputs, cfg.probability, cfg.passes, self.config.seed)?;
        let header = InterventionHeader {
            format: INTERVENTION_FORMAT.into(),
            seed: self.config.seed,
            probability: cfg.probability,
            passes: cfg.passes,
            instances: inputs.len(),
            registry: intervention::channel_registry(&model),
        };
        let path = self.artifacts.interventions();
        intervention::save_interventions(&path, &header, &records)?;
        let zeroed: usize = records.iter().map(InterventionRecord::intervened_count).sum();
        let slots = records.len() * header.registry.len();
        Ok((
            vec![path],
            format!(
                "{} records, intervened fraction {:.4}",
                records.len(),
                zeroed as f64 / slots.max(1) as f64
            ),
        ))
    }

    pub fn load_interventions(&self) -> Result<(InterventionHeader, Vec<InterventionRecord>)> {
        intervention::load_interventions(&self.artifacts.interventions())
    }

    fn discretize(&self) -> Result<(Vec<PathBuf>, String)> {
        let (_, records) = self.load_interventions()?;
        let cfg = &self.config.concepts;
        let threshold = concepts::relative_threshold(&records, cfg.relative_variance_threshold);
        let active = concepts::select_active(&records, threshold, cfg.max_per_level)?;
        let spec = concepts::fit_bins(&records, &active, cfg.bins)?;
        let discrete = concepts::discretize_all(&records, &spec)?;
        spec.save(&self.artifacts.discretization())?;
        concepts::save_discrete(&self.artifacts.discrete_records(), &discrete)?;
        let per_level: Vec<String> = spec
            .level_groups()
            .iter()
            .map(|(l, m)| format!("level{l}: {}", m.len()))
            .collect();
        Ok((
            vec![self.artifacts.discretization(), self.artifacts.discrete_records()],
            format!("{} active concepts ({})", spec.active.len(), per_level.join(", ")),
        ))
    }

    pub fn load_spec(&self) -> Result<DiscretizationSpec> {
        DiscretizationSpec::load(&self.artifacts.discretization())
    }

    fn fit_bn(&self) -> Result<(Vec<PathBuf>, String)> {
        let spec = self.load_spec()?;
        let records = concepts::load_discrete(&self.artifacts.discrete_records())?;
        let bn = fit_concept_bn(&spec, &records, self.config.bn.alpha)?;
        save_bn(&self.artifacts.bn(), &bn)?;
        Ok((
            vec![self.artifacts.bn()],
            format!(
                "{} nodes, {} edges",
                bn.nodes().len(),
                bn.structure().edge_count()
            ),
        ))
    }

    pub fn load_bn(&self) -> Result<CausalBayesNet> {
        load_bn(&self.artifacts.bn())
    }

    /// The dataset-level ranking for `variant` (config default if `None`).
    pub fn ranking(&self, bn: &CausalBayesNet, variant: Option<EffectVariant>) -> Result<EffectReport> {
        explain::rank_concepts(
            bn,
            &Evidence::new(),
            variant.unwrap_or(self.config.explain.variant),
            self.config.seed,
        )
    }

    fn rank(&self, variant: Option<EffectVariant>) -> Result<(Vec<PathBuf>, String)> {
        let bn = self.load_bn()?;
        let report = self.ranking(&bn, variant)?;
        io::write_bytes(&self.artifacts.rank_text(), report.to_text().as_bytes())?;
        io::write_json(&self.artifacts.rank_json(), &report)?;
        Ok((vec![self.artifacts.rank_text(), self.artifacts.rank_json()], report.to_text()))
    }

    fn explain_instance(&self, args: &StageArgs) -> Result<(Vec<PathBuf>, String)> {
        let ds = self.load_dataset()?;
        let id = match args.instance {
            Some(id) => id,
            None => *ds.test.first().ok_or(Error::NoInstances)?,
        };
        let instance = ds
            .instances
            .get(id)
            .filter(|i| i.id == id)
            .ok_or_else(|| Error::InvalidArgument(format!("no instance {id}")))?;
        let model = self.load_model()?;
        let spec = self.load_spec()?;
        let bn = self.load_bn()?;
        let report = instance_report(&model, &spec, &bn, id, &instance.image, instance.label, args.k.unwrap_or(self.config.explain.top_k))?;
        let (txt, json) = (self.artifacts.explain_text(id), self.artifacts.explain_json(id));
        io::write_bytes(&txt, report.to_text().as_bytes())?;
        io::write_json(&json, &report)?;
        Ok((vec![txt, json], report.to_text()))
    }

    fn nn(&self, args: &StageArgs) -> Result<(Vec<PathBuf>, String)> {
        let (Some(level), Some(channel)) = (args.level, args.channel) else {
            return Err(Error::InvalidArgument("nn needs --level and --channel".into()));
        };
        let ds = self.load_dataset()?;
        let id = match args.instance {
            Some(id) => id,
            None => *ds.test.first().ok_or(Error::NoInstances)?,
        };
        let model = self.load_model()?;
        let spec = self.load_spec()?;
        let corpus = EncodedCorpus::encode(&model, ds.test_instances().map(|i| (i.id, &i.image)))?;
        let report = neighbor_report(&corpus, &spec, ConceptId::new(level, channel), id, args.k.unwrap_or(self.config.explain.neighbors))?;
        let path = self.artifacts.nn_json(ConceptId::new(level, channel), id, report.neighbors.len() - 1);
        io::write_json(&path, &report)?;
        let lines: Vec<String> = report
            .neighbors
            .iter()
            .map(|n| format!("{:>6}  {:.9}", n.id, n.distance))
            .collect();
        Ok((vec![path], lines.join("\n")))
    }

    /// SHA-256 over the provenance stamps of the build stages; changes
    /// whenever any fitted artifact does.
    pub fn fingerprint(&self) -> Result<String> {
        let mut h = Sha256::new();
        for stage in &Stage::BUILD[..6] {
            h.update(io::read_bytes(&self.artifacts.provenance(*stage))?);
        }
        Ok(hex::encode(h.finalize()))
    }
}

fn walk(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            out.extend(walk(&path)?);
        } else {
            out.push(path);
        }
    }
    Ok(out)
}

/// Layered structure over the active concepts, fitted to the discrete records.
pub fn fit_concept_bn(spec: &DiscretizationSpec, records: &[DiscreteRecord], alpha: f64) -> Result<CausalBayesNet> {
    let classes = 2;
    let levels: Vec<Vec<(String, usize)>> = spec
        .level_groups()
        .into_iter()
        .map(|(_, members)| members.iter().map(|&i| (spec.active[i].name(), spec.bins(i))).collect())
        .collect();
    let structure = layered_structure(&levels, classes, classes)?;
    // node order: label, concepts in spec order, prediction
    let data: Vec<Observation> = records
        .iter()
        .map(|r| {
            let mut values = Vec::with_capacity(r.bins.len() + 2);
            values.push(r.label);
            values.extend(&r.bins);
            values.push(r.prediction);
            let mut intervened = Vec::with_capacity(values.len());
            intervened.push(false);
            intervened.extend(&r.intervened);
            intervened.push(false);
            Observation { values, intervened }
        })
        .collect();
    fit_cpds(&structure, &data, alpha)
}

/// Top effects of one instance, with its concept bins and prediction as
/// evidence and its predicted class as the target.
pub fn instance_report(model: &AutoencodedModel, spec: &DiscretizationSpec, bn: &CausalBayesNet, id: usize, image: &crate::Tensor, label: usize, k: usize) -> Result<InstanceReport> {
    let trace = model.forward(image, None)?;
    let pooled: Vec<Vec<f64>> = trace.codes.iter().map(intervention::pool_code).collect();
    let predicted = crate::target::argmax(&trace.output);
    let mut z = explain::instance_evidence(bn, spec, &pooled)?;
    z.insert(bn.index_of(PREDICTION)?, predicted);
    let effects = explain::instance_top_effects(bn, &z, predicted, k)?;
    Ok(InstanceReport {
        instance_id: id,
        label,
        predicted,
        evidence: z.iter().map(|(&n, &v)| (bn.nodes()[n].name.clone(), v)).collect(),
        effects,
    })
}

pub fn neighbor_report(corpus: &EncodedCorpus, spec: &DiscretizationSpec, concept: ConceptId, query: usize, k: usize) -> Result<NeighborReport> {
    let found: Vec<Neighbor> = explain::concept_nearest_neighbors(corpus, spec, concept, query, k)?;
    let neighbors = found
        .into_iter()
        .map(|n| {
            let i = corpus.position(n.id).expect("neighbor from corpus");
            let width = corpus.codes[i][concept.level].shape()[2];
            NeighborEntry {
                id: n.id,
                distance: n.distance,
                map: map_rows(corpus.map(i, concept), width),
            }
        })
        .collect();
    Ok(NeighborReport {
        concept: concept.name(),
        level: concept.level,
        channel: concept.channel,
        query,
        neighbors,
    })
}
