//! Checkpoint files.
//!
//! A checkpoint is a text header interleaved with raw parameter blocks.
//! Lines are newline-terminated ASCII; a `params <len>` line is followed
//! immediately by `len` little-endian f64 values (8*len bytes), then the
//! next header line. Network spec descriptors look like
//!
//! ```text
//! spec policy in=4 hidden=8,8 head=cat:2
//! spec critic in=5 hidden=8,8 head=scalar
//! spec policy in=4 hidden=16,16 head=gauss:2:0.5
//! ```
//!
//! Anchor sets are a `anchors <n> <convex|bezier3> <beta>` line followed by
//! n parameter blocks.

use std::io::{BufRead, Write};

use crate::algos::{Network, TrainedModel};
use crate::envs::Family;
use crate::error::{Error, Result};
use crate::nn::{Head, MlpSpec, ParamVector};
use crate::subspace::{AnchorSet, MixMode};

const MAGIC: &str = "subspace-rl checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub method: String,
    pub family: Family,
    pub seed: u64,
    pub env_steps: u64,
}

fn head_str(head: &Head) -> String {
    match head {
        Head::Categorical { n_actions } => format!("cat:{n_actions}"),
        Head::SquashedGaussian { action_dim, std } => format!("gauss:{action_dim}:{std}"),
        Head::Scalar => "scalar".into(),
    }
}

fn parse_head(s: &str) -> Result<Head> {
    if s == "scalar" {
        return Ok(Head::Scalar);
    }
    let mut it = s.split(':');
    match it.next() {
        Some("cat") => {
            let n = it
                .next()
                .and_then(|x| x.parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad head `{s}`")))?;
            Ok(Head::Categorical { n_actions: n })
        }
        Some("gauss") => {
            let d = it
                .next()
                .and_then(|x| x.parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad head `{s}`")))?;
            let std = it
                .next()
                .and_then(|x| x.parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad head `{s}`")))?;
            Ok(Head::SquashedGaussian { action_dim: d, std })
        }
        _ => Err(Error::Parse(format!("bad head `{s}`"))),
    }
}

fn spec_line(role: &str, spec: &MlpSpec) -> String {
    let hidden = if spec.hidden.is_empty() {
        "-".to_string()
    } else {
        spec.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(",")
    };
    format!("spec {role} in={} hidden={hidden} head={}\n", spec.input_dim, head_str(&spec.head))
}

fn parse_spec_line(line: &str) -> Result<(String, MlpSpec)> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 5 || parts[0] != "spec" {
        return Err(Error::Parse(format!("bad spec line `{line}`")));
    }
    let role = parts[1].to_string();
    let input_dim: usize = parts[2]
        .strip_prefix("in=")
        .and_then(|x| x.parse().ok())
        .ok_or_else(|| Error::Parse(format!("bad spec line `{line}`")))?;
    let hidden_str = parts[3]
        .strip_prefix("hidden=")
        .ok_or_else(|| Error::Parse(format!("bad spec line `{line}`")))?;
    let hidden: Vec<usize> = if hidden_str == "-" {
        vec![]
    } else {
        hidden_str
            .split(',')
            .map(|x| x.parse().map_err(|_| Error::Parse(format!("bad hidden `{hidden_str}`"))))
            .collect::<Result<_>>()?
    };
    let head = parse_head(
        parts[4].strip_prefix("head=").ok_or_else(|| Error::Parse(format!("bad spec `{line}`")))?,
    )?;
    Ok((role, MlpSpec::new(input_dim, hidden, head)?))
}

fn write_params(w: &mut impl Write, p: &ParamVector) -> Result<()> {
    writeln!(w, "params {}", p.len())?;
    for v in p.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_line(r: &mut impl BufRead) -> Result<String> {
    let mut line = String::new();
    let n = r.read_line(&mut line)?;
    if n == 0 {
        return Err(Error::Parse("unexpected end of checkpoint".into()));
    }
    Ok(line.trim_end_matches('\n').to_string())
}

fn read_params(r: &mut impl BufRead) -> Result<ParamVector> {
    let line = read_line(r)?;
    let len: usize = line
        .strip_prefix("params ")
        .and_then(|x| x.parse().ok())
        .ok_or_else(|| Error::Parse(format!("expected params line, got `{line}`")))?;
    let mut buf = vec![0u8; len * 8];
    r.read_exact(&mut buf)?;
    let values: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(ParamVector::new(values))
}

fn write_network(w: &mut impl Write, role: &str, net: &Network) -> Result<()> {
    w.write_all(spec_line(role, &net.spec).as_bytes())?;
    write_params(w, &net.params)
}

fn read_network(r: &mut impl BufRead, expect_role: &str) -> Result<Network> {
    let (role, spec) = parse_spec_line(&read_line(r)?)?;
    if role != expect_role {
        return Err(Error::Parse(format!("expected `{expect_role}` network, got `{role}`")));
    }
    let params = read_params(r)?;
    if params.len() != spec.param_count() {
        return Err(Error::DimMismatch {
            what: "checkpoint params",
            expected: spec.param_count(),
            got: params.len(),
        });
    }
    Ok(Network { spec, params })
}

/// Serializes a model and its metadata.
pub fn write_checkpoint(w: &mut impl Write, model: &TrainedModel, meta: &CheckpointMeta) -> Result<()> {
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "method {}", meta.method)?;
    writeln!(w, "family {}", meta.family.name())?;
    writeln!(w, "seed {}", meta.seed)?;
    writeln!(w, "env_steps {}", meta.env_steps)?;
    match model {
        TrainedModel::Single { policy, critic } => {
            writeln!(w, "kind single")?;
            write_network(w, "policy", policy)?;
            write_network(w, "critic", critic)?;
        }
        TrainedModel::Subspace { policy_spec, anchors, critic } => {
            writeln!(w, "kind subspace")?;
            w.write_all(spec_line("policy", policy_spec).as_bytes())?;
            let mode = match anchors.mix_mode() {
                MixMode::Convex => "convex",
                MixMode::Bezier3 => "bezier3",
            };
            writeln!(w, "anchors {} {mode} {}", anchors.n_anchors(), anchors.beta())?;
            for k in 0..anchors.n_anchors() {
                write_params(w, anchors.anchor(k))?;
            }
            write_network(w, "critic", critic)?;
        }
        TrainedModel::Ensemble { members, critics } => {
            writeln!(w, "kind ensemble {}", members.len())?;
            for (m, c) in members.iter().zip(critics) {
                write_network(w, "policy", m)?;
                write_network(w, "critic", c)?;
            }
        }
        TrainedModel::SkillConditioned { policy, critic, discriminator, n_skills } => {
            writeln!(w, "kind skill {n_skills}")?;
            write_network(w, "policy", policy)?;
            write_network(w, "critic", critic)?;
            write_network(w, "discriminator", discriminator)?;
        }
        TrainedModel::LatentConditioned { policy, critic, discriminator, lc } => {
            writeln!(w, "kind latent {}", if *lc { "lc" } else { "cont" })?;
            write_network(w, "policy", policy)?;
            write_network(w, "critic", critic)?;
            write_network(w, "discriminator", discriminator)?;
        }
    }
    writeln!(w, "end")?;
    Ok(())
}

/// Reads back a checkpoint written by [`write_checkpoint`].
pub fn read_checkpoint(r: &mut impl BufRead) -> Result<(TrainedModel, CheckpointMeta)> {
    let magic = read_line(r)?;
    if magic != MAGIC {
        return Err(Error::Parse(format!("not a checkpoint (magic `{magic}`)")));
    }
    let kv = |line: String, key: &str| -> Result<String> {
        line.strip_prefix(key)
            .and_then(|x| x.strip_prefix(' '))
            .map(|x| x.to_string())
            .ok_or_else(|| Error::Parse(format!("expected `{key}`, got `{line}`")))
    };
    let method = kv(read_line(r)?, "method")?;
    let family = Family::parse(&kv(read_line(r)?, "family")?)?;
    let seed: u64 =
        kv(read_line(r)?, "seed")?.parse().map_err(|_| Error::Parse("bad seed".into()))?;
    let env_steps: u64 =
        kv(read_line(r)?, "env_steps")?.parse().map_err(|_| Error::Parse("bad env_steps".into()))?;
    let kind_line = read_line(r)?;
    let kind: Vec<&str> = kind_line.split_whitespace().collect();
    let model = match kind.first() {
        Some(&"kind") => match kind.get(1) {
            Some(&"single") => {
                let policy = read_network(r, "policy")?;
                let critic = read_network(r, "critic")?;
                TrainedModel::Single { policy, critic }
            }
            Some(&"subspace") => {
                let (role, policy_spec) = parse_spec_line(&read_line(r)?)?;
                if role != "policy" {
                    return Err(Error::Parse("subspace checkpoint needs a policy spec".into()));
                }
                let anchors_line = read_line(r)?;
                let parts: Vec<&str> = anchors_line.split_whitespace().collect();
                if parts.len() != 4 || parts[0] != "anchors" {
                    return Err(Error::Parse(format!("bad anchors line `{anchors_line}`")));
                }
                let n: usize = parts[1].parse().map_err(|_| Error::Parse("bad anchor count".into()))?;
                let mode = match parts[2] {
                    "convex" => MixMode::Convex,
                    "bezier3" => MixMode::Bezier3,
                    other => return Err(Error::Parse(format!("bad mix mode `{other}`"))),
                };
                let beta: f64 = parts[3].parse().map_err(|_| Error::Parse("bad beta".into()))?;
                let mut anchors = Vec::with_capacity(n);
                for _ in 0..n {
                    anchors.push(read_params(r)?);
                }
                let critic = read_network(r, "critic")?;
                TrainedModel::Subspace {
                    policy_spec,
                    anchors: AnchorSet::new(anchors, mode, beta)?,
                    critic,
                }
            }
            Some(&"ensemble") => {
                let n: usize = kind
                    .get(2)
                    .and_then(|x| x.parse().ok())
                    .ok_or_else(|| Error::Parse("bad ensemble size".into()))?;
                let mut members = Vec::with_capacity(n);
                let mut critics = Vec::with_capacity(n);
                for _ in 0..n {
                    members.push(read_network(r, "policy")?);
                    critics.push(read_network(r, "critic")?);
                }
                TrainedModel::Ensemble { members, critics }
            }
            Some(&"skill") => {
                let n_skills: usize = kind
                    .get(2)
                    .and_then(|x| x.parse().ok())
                    .ok_or_else(|| Error::Parse("bad skill count".into()))?;
                let policy = read_network(r, "policy")?;
                let critic = read_network(r, "critic")?;
                let discriminator = read_network(r, "discriminator")?;
                TrainedModel::SkillConditioned { policy, critic, discriminator, n_skills }
            }
            Some(&"latent") => {
                let lc = match kind.get(2) {
                    Some(&"lc") => true,
                    Some(&"cont") => false,
                    other => return Err(Error::Parse(format!("bad latent kind `{other:?}`"))),
                };
                let policy = read_network(r, "policy")?;
                let critic = read_network(r, "critic")?;
                let discriminator = read_network(r, "discriminator")?;
                TrainedModel::LatentConditioned { policy, critic, discriminator, lc }
            }
            other => return Err(Error::Parse(format!("unknown checkpoint kind `{other:?}`"))),
        },
        _ => return Err(Error::Parse(format!("expected kind line, got `{kind_line}`"))),
    };
    let end = read_line(r)?;
    if end != "end" {
        return Err(Error::Parse(format!("expected end marker, got `{end}`")));
    }
    Ok((model, CheckpointMeta { method, family, seed, env_steps }))
}

/// Convenience wrappers over files.
pub fn save_checkpoint(path: &std::path::Path, model: &TrainedModel, meta: &CheckpointMeta) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(&mut f, model, meta)
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<(TrainedModel, CheckpointMeta)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_checkpoint(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn net(input: usize, head: Head, seed: u64) -> Network {
        let spec = MlpSpec::new(input, vec![4, 3], head).unwrap();
        let mut r = rng::stream(seed, "ckpt");
        let params = spec.init_params(&mut r);
        Network { spec, params }
    }

    fn roundtrip(model: TrainedModel) {
        let meta = CheckpointMeta {
            method: model.method_name().into(),
            family: Family::CartPole,
            seed: 7,
            env_steps: 1234,
        };
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &model, &meta).unwrap();
        let (back_model, back_meta) = read_checkpoint(&mut std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(model, back_model);
        assert_eq!(meta, back_meta);
        // Bytes are deterministic.
        let mut buf2 = Vec::new();
        write_checkpoint(&mut buf2, &model, &meta).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn single_roundtrip() {
        roundtrip(TrainedModel::Single {
            policy: net(4, Head::Categorical { n_actions: 2 }, 1),
            critic: net(4, Head::Scalar, 2),
        });
    }

    #[test]
    fn subspace_roundtrip() {
        let spec = MlpSpec::new(4, vec![4, 3], Head::Categorical { n_actions: 2 }).unwrap();
        let mut r = rng::stream(3, "ckpt");
        let anchors = AnchorSet::new(
            vec![spec.init_params(&mut r), spec.init_params(&mut r)],
            MixMode::Convex,
            1.0,
        )
        .unwrap();
        roundtrip(TrainedModel::Subspace {
            policy_spec: spec,
            anchors,
            critic: net(5, Head::Scalar, 4),
        });
    }

    #[test]
    fn gaussian_and_skill_roundtrip() {
        roundtrip(TrainedModel::SkillConditioned {
            policy: net(6, Head::Categorical { n_actions: 4 }, 5),
            critic: net(6, Head::Scalar, 6),
            discriminator: net(4, Head::Categorical { n_actions: 2 }, 7),
            n_skills: 2,
        });
        roundtrip(TrainedModel::LatentConditioned {
            policy: net(5, Head::SquashedGaussian { action_dim: 2, std: 0.5 }, 8),
            critic: net(5, Head::Scalar, 9),
            discriminator: net(6, Head::Scalar, 10),
            lc: true,
        });
        roundtrip(TrainedModel::Ensemble {
            members: vec![net(4, Head::Categorical { n_actions: 2 }, 11)],
            critics: vec![net(4, Head::Scalar, 12)],
        });
    }
}
