//! Verbal command vocabulary and the per-command Gaussian model of the hand
//! displacement each command produces.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::direction::Direction;

pub const INCH: f64 = 0.0254;

/// Nominal magnitudes of the default vocabulary, in inches.
pub const DEFAULT_MAGNITUDES_IN: [u32; 6] = [1, 2, 3, 6, 9, 12];

/// Lower bound applied to fitted standard deviations, meters.
pub const SIGMA_FLOOR: f64 = 0.005;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum HandModelError {
    #[error("demonstration dataset is empty")]
    EmptyDataset,
    #[error("malformed demonstration row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("unknown command id {0}")]
    UnknownCommand(usize),
    #[error("invalid command model: {0}")]
    InvalidModel(String),
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = HandModelError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandSpec {
    pub id: usize,
    pub direction: Direction,
    /// Meters.
    pub nominal_magnitude: f64,
    pub utterance: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaussianSource {
    Fitted,
    /// No usable demonstrations; synthetic default substituted.
    Fallback,
    SyntheticDefault,
}

/// Signed displacement along the commanded direction, `N(mu, sigma^2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MovementGaussian {
    pub command_id: usize,
    pub mu: f64,
    pub sigma: f64,
    pub sample_count: usize,
    pub source: GaussianSource,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Fitted,
    SyntheticDefault,
}

/// Serializes through the versioned model-file layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct CommandModel {
    commands: Vec<CommandSpec>,
    gaussians: Vec<MovementGaussian>,
    provenance: Provenance,
}

#[derive(Clone, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    provenance: Provenance,
    commands: Vec<CommandSpec>,
    gaussians: Vec<MovementGaussian>,
}

impl TryFrom<ModelFile> for CommandModel {
    type Error = HandModelError;

    fn try_from(file: ModelFile) -> Result<Self> {
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(HandModelError::UnsupportedVersion(file.format_version));
        }
        Self::new(file.commands, file.gaussians, file.provenance)
    }
}

impl From<CommandModel> for ModelFile {
    fn from(model: CommandModel) -> Self {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            provenance: model.provenance,
            commands: model.commands,
            gaussians: model.gaussians,
        }
    }
}

/// One demonstration: the command issued and the net hand displacement that followed.
#[derive(Clone, Debug, PartialEq)]
pub struct Demonstration {
    pub command_id: usize,
    pub displacement: Vector3<f64>,
}

pub fn utterance_for(direction: Direction, inches: u32) -> String {
    let unit = if inches == 1 { "inch" } else { "inches" };
    format!("Move {inches} {unit} {}", direction.phrase())
}

/// Six directions by six magnitudes; id = direction index * 6 + magnitude index.
pub fn default_vocabulary() -> Vec<CommandSpec> {
    Direction::ALL
        .into_iter()
        .flat_map(|direction| {
            DEFAULT_MAGNITUDES_IN
                .into_iter()
                .map(move |inches| (direction, inches))
        })
        .enumerate()
        .map(|(id, (direction, inches))| CommandSpec {
            id,
            direction,
            nominal_magnitude: f64::from(inches) * INCH,
            utterance: utterance_for(direction, inches),
        })
        .collect()
}

fn default_gaussian(spec: &CommandSpec, source: GaussianSource) -> MovementGaussian {
    MovementGaussian {
        command_id: spec.id,
        mu: spec.nominal_magnitude,
        sigma: (0.2 * spec.nominal_magnitude).max(0.01),
        sample_count: 0,
        source,
    }
}

/// Model used when no demonstration data is available: mean equals the nominal
/// magnitude, standard deviation is 20% of it with a 1 cm floor.
pub fn synthetic_default_model() -> CommandModel {
    let commands = default_vocabulary();
    let gaussians = commands
        .iter()
        .map(|c| default_gaussian(c, GaussianSource::SyntheticDefault))
        .collect();
    CommandModel {
        commands,
        gaussians,
        provenance: Provenance::SyntheticDefault,
    }
}

/// Fit against the default vocabulary.
pub fn fit(demos: &[Demonstration]) -> Result<CommandModel> {
    fit_with_vocabulary(default_vocabulary(), demos)
}

/// Per command: mean and unbiased standard deviation of the displacement projected
/// onto the command's signed axis. Off-axis components are discarded.
pub fn fit_with_vocabulary(
    commands: Vec<CommandSpec>,
    demos: &[Demonstration],
) -> Result<CommandModel> {
    if demos.is_empty() {
        return Err(HandModelError::EmptyDataset);
    }
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); commands.len()];
    for (row, demo) in demos.iter().enumerate() {
        let spec = commands
            .get(demo.command_id)
            .ok_or_else(|| HandModelError::MalformedRow {
                row,
                reason: format!(
                    "command_id {} outside 0..{}",
                    demo.command_id,
                    commands.len()
                ),
            })?;
        samples[demo.command_id].push(demo.displacement.dot(&spec.direction.unit()));
    }

    let gaussians = commands
        .iter()
        .zip(&samples)
        .map(|(spec, xs)| {
            if xs.len() < 2 {
                return default_gaussian(spec, GaussianSource::Fallback);
            }
            let n = xs.len() as f64;
            let mu = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0);
            MovementGaussian {
                command_id: spec.id,
                mu,
                sigma: var.sqrt().max(SIGMA_FLOOR),
                sample_count: xs.len(),
                source: GaussianSource::Fitted,
            }
        })
        .collect();

    CommandModel::new(commands, gaussians, Provenance::Fitted)
}

/// Parse a `command_id,dx,dy,dz` CSV.
pub fn read_demonstrations<R: Read>(reader: R) -> Result<Vec<Demonstration>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| malformed(0, e.to_string()))?
        .clone();
    let expected = ["command_id", "dx", "dy", "dz"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(malformed(
            0,
            format!("expected header {}", expected.join(",")),
        ));
    }
    let mut demos = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| malformed(row, e.to_string()))?;
        let field = |k: usize| -> Result<&str> {
            record
                .get(k)
                .ok_or_else(|| malformed(row, "missing field".into()))
        };
        let command_id = field(0)?
            .parse::<usize>()
            .map_err(|e| malformed(row, format!("command_id: {e}")))?;
        let mut d = [0.0; 3];
        for (k, slot) in d.iter_mut().enumerate() {
            *slot = field(k + 1)?
                .parse::<f64>()
                .map_err(|e| malformed(row, format!("{}: {e}", expected[k + 1])))?;
            if !slot.is_finite() {
                return Err(malformed(row, "non-finite displacement".into()));
            }
        }
        demos.push(Demonstration {
            command_id,
            displacement: Vector3::from(d),
        });
    }
    Ok(demos)
}

fn malformed(row: usize, reason: String) -> HandModelError {
    HandModelError::MalformedRow { row, reason }
}

impl CommandModel {
    pub fn new(
        commands: Vec<CommandSpec>,
        gaussians: Vec<MovementGaussian>,
        provenance: Provenance,
    ) -> Result<Self> {
        let model = Self {
            commands,
            gaussians,
            provenance,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(HandModelError::InvalidModel(msg));
        if self.commands.is_empty() {
            return invalid("empty vocabulary".into());
        }
        if self.commands.len() != self.gaussians.len() {
            return invalid(format!(
                "{} commands but {} gaussians",
                self.commands.len(),
                self.gaussians.len()
            ));
        }
        let mut utterances = HashSet::new();
        for (i, (c, g)) in self.commands.iter().zip(&self.gaussians).enumerate() {
            if c.id != i || g.command_id != i {
                return invalid(format!("ids must be dense and ordered (entry {i})"));
            }
            if !(c.nominal_magnitude > 0.0 && c.nominal_magnitude.is_finite()) {
                return invalid(format!("command {i} has non-positive magnitude"));
            }
            if !(g.sigma >= 0.0 && g.sigma.is_finite() && g.mu.is_finite()) {
                return invalid(format!("command {i} has invalid gaussian"));
            }
            if !utterances.insert(c.utterance.as_str()) {
                return invalid(format!("duplicate utterance `{}`", c.utterance));
            }
        }
        Ok(())
    }

    pub fn commands(&self) -> &[CommandSpec] {
        &self.commands
    }

    pub fn gaussians(&self) -> &[MovementGaussian] {
        &self.gaussians
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.commands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }

    pub fn command(&self, id: usize) -> Result<&CommandSpec> {
        self.commands
            .get(id)
            .ok_or(HandModelError::UnknownCommand(id))
    }

    pub fn gaussian(&self, id: usize) -> Result<&MovementGaussian> {
        self.gaussians
            .get(id)
            .ok_or(HandModelError::UnknownCommand(id))
    }

    /// Draw the signed displacement (positive = commanded direction) for a command.
    pub fn sample_movement<R: Rng + ?Sized>(&self, id: usize, rng: &mut R) -> Result<f64> {
        let g = self.gaussian(id)?;
        if g.sigma == 0.0 {
            return Ok(g.mu);
        }
        let normal =
            Normal::new(g.mu, g.sigma).map_err(|e| HandModelError::InvalidModel(e.to_string()))?;
        Ok(normal.sample(rng))
    }

    /// SHA-256 over the canonical JSON of the vocabulary.
    pub fn vocabulary_hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.commands).expect("vocabulary serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        Self::try_from(file)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_json()?.as_bytes())?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn demos_for(command_id: usize, values: &[f64]) -> Vec<Demonstration> {
        let dir = default_vocabulary()[command_id].direction;
        values
            .iter()
            .map(|&v| Demonstration {
                command_id,
                displacement: dir.unit() * v,
            })
            .collect()
    }

    #[test]
    fn vocabulary_shape() {
        let vocab = default_vocabulary();
        assert_eq!(vocab.len(), 36);
        let six_right = vocab
            .iter()
            .find(|c| c.direction == Direction::Right && c.nominal_magnitude == 6.0 * INCH)
            .unwrap();
        assert!((six_right.nominal_magnitude - 0.1524).abs() < 1e-12);
        assert_eq!(six_right.utterance, "Move 6 inches to the right");
        assert_eq!(vocab[0].utterance, "Move 1 inch to the left");
        for d in Direction::ALL {
            let mags: Vec<f64> = vocab
                .iter()
                .filter(|c| c.direction == d)
                .map(|c| c.nominal_magnitude)
                .collect();
            assert_eq!(mags.len(), 6);
            assert!(mags[0] > 0.0);
            assert!(mags.windows(2).all(|w| w[0] < w[1]));
        }
        let unique: HashSet<_> = vocab.iter().map(|c| &c.utterance).collect();
        assert_eq!(unique.len(), 36);
    }

    #[test]
    fn synthetic_default_formula() {
        let m = synthetic_default_model();
        assert_eq!(m.provenance(), Provenance::SyntheticDefault);
        let six = m
            .commands()
            .iter()
            .position(|c| c.utterance == "Move 6 inches to the right")
            .unwrap();
        let g = m.gaussian(six).unwrap();
        assert!((g.mu - 0.1524).abs() < 1e-12);
        assert!((g.sigma - 0.030).abs() < 5e-4);
        let one = m.gaussian(0).unwrap();
        assert_eq!(one.sigma, 0.01);
    }

    #[test]
    fn synthetic_default_is_monotone_within_direction() {
        let m = synthetic_default_model();
        for chunk in m.gaussians().chunks(6) {
            assert!(chunk.windows(2).all(|w| w[0].mu < w[1].mu));
        }
    }

    #[test]
    fn fit_degenerate_variance_hits_floor() {
        let model = fit(&demos_for(3, &[0.10; 5])).unwrap();
        let g = model.gaussian(3).unwrap();
        assert!((g.mu - 0.10).abs() < 1e-12);
        assert_eq!(g.sigma, SIGMA_FLOOR);
        assert_eq!(g.source, GaussianSource::Fitted);
        // every other command fell back
        assert_eq!(model.gaussian(0).unwrap().source, GaussianSource::Fallback);
    }

    #[test]
    fn fit_projects_onto_signed_axis() {
        // "left" commands: displacement in -x is a positive movement.
        let demos = vec![
            Demonstration {
                command_id: 0,
                displacement: Vector3::new(-0.02, 0.01, 0.5),
            },
            Demonstration {
                command_id: 0,
                displacement: Vector3::new(-0.04, -0.01, -0.5),
            },
        ];
        let g = fit(&demos).unwrap().gaussian(0).unwrap().clone();
        assert!((g.mu - 0.03).abs() < 1e-12);
        assert!((g.sigma - (0.0002f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(fit(&[]), Err(HandModelError::EmptyDataset)));
        let bad = vec![Demonstration {
            command_id: 36,
            displacement: Vector3::zeros(),
        }];
        assert!(matches!(
            fit(&bad),
            Err(HandModelError::MalformedRow { row: 0, .. })
        ));
    }

    #[test]
    fn sampling_is_deterministic_and_exact_at_zero_sigma() {
        let mut m = synthetic_default_model();
        m.gaussians[4].sigma = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(m.sample_movement(4, &mut rng).unwrap(), m.gaussians[4].mu);

        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20)
                .map(|i| m.sample_movement(i, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert!(matches!(
            m.sample_movement(99, &mut rng),
            Err(HandModelError::UnknownCommand(99))
        ));
    }

    #[test]
    fn sample_mean_converges() {
        let mut m = synthetic_default_model();
        m.gaussians[9].mu = 0.1524;
        m.gaussians[9].sigma = 0.02;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| m.sample_movement(9, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.1524).abs() < 0.001, "mean {mean}");
    }

    #[test]
    fn csv_parsing() {
        let text = "command_id,dx,dy,dz\n3,0.15,0.0,0.01\n 4 , -0.2, 0.0 ,0\n";
        let demos = read_demonstrations(text.as_bytes()).unwrap();
        assert_eq!(demos.len(), 2);
        assert_eq!(demos[1].command_id, 4);
        assert_eq!(demos[1].displacement, Vector3::new(-0.2, 0.0, 0.0));

        let bad_header = "id,dx,dy,dz\n1,0,0,0\n";
        assert!(matches!(
            read_demonstrations(bad_header.as_bytes()),
            Err(HandModelError::MalformedRow { row: 0, .. })
        ));
        let bad_value = "command_id,dx,dy,dz\n1,abc,0,0\n";
        assert!(matches!(
            read_demonstrations(bad_value.as_bytes()),
            Err(HandModelError::MalformedRow { row: 1, .. })
        ));
    }

    #[test]
    fn model_file_round_trip_and_validation() {
        let m = synthetic_default_model();
        let back = CommandModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.vocabulary_hash(), m.vocabulary_hash());

        let text = m
            .to_json()
            .unwrap()
            .replace("\"format_version\": 1", "\"format_version\": 7");
        assert!(matches!(
            CommandModel::from_json(&text),
            Err(HandModelError::UnsupportedVersion(7))
        ));

        let mut commands = m.commands().to_vec();
        commands[1].utterance = commands[0].utterance.clone();
        assert!(CommandModel::new(commands, m.gaussians().to_vec(), Provenance::Fitted).is_err());
    }
}
