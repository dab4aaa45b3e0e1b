use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Expert, LevelParams, MoeConfig, MoeModel, Params};
use crate::container::{self, ContainerError};
use crate::encoder::{EncoderConfig, EncoderTables};
use crate::taxonomy::Taxonomy;
use crate::tensor::Matrix;

pub const MODEL_MAGIC: [u8; 4] = *b"TAXN";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("checkpoint built for taxonomy {saved}, supplied taxonomy hashes to {supplied}")]
    TaxonomyMismatch { saved: String, supplied: String },
}

#[derive(Serialize, Deserialize)]
struct Meta {
    taxonomy_hash: String,
    encoder: EncoderConfig,
    config: MoeConfig,
    level_codes: Vec<Vec<String>>,
}

impl MoeModel {
    pub fn save<W: Write>(&self, sink: W) -> Result<(), CheckpointError> {
        let meta = Meta {
            taxonomy_hash: self.taxonomy_hash.clone(),
            encoder: self.encoder.clone(),
            config: self.config.clone(),
            level_codes: self.level_codes.clone(),
        };
        container::write(sink, MODEL_MAGIC, &meta, &self.params.tensors())?;
        Ok(())
    }

    /// Reads a checkpoint; when `taxonomy` is given its hash must match the
    /// one the model was trained against.
    pub fn load<R: Read>(source: R, taxonomy: Option<&Taxonomy>) -> Result<MoeModel, CheckpointError> {
        let (meta, manifest, values): (Meta, _, _) = container::read(source, MODEL_MAGIC)?;
        if let Some(t) = taxonomy {
            let supplied = t.content_hash();
            if supplied != meta.taxonomy_hash {
                return Err(CheckpointError::TaxonomyMismatch { saved: meta.taxonomy_hash, supplied });
            }
        }
        let widths: Vec<usize> =
            meta.level_codes.iter().map(|c| c.len() + usize::from(meta.config.include_null_label)).collect();
        if widths.len() != meta.config.levels {
            return Err(ContainerError::Manifest(format!(
                "{} label lists for {} levels",
                widths.len(),
                meta.config.levels
            ))
            .into());
        }
        let mut params = Params::zeros(&meta.encoder, &meta.config, &widths);
        let expected: Vec<_> = params.tensors().into_iter().map(|(e, _)| e).collect();
        if expected != manifest {
            return Err(ContainerError::Manifest("tensor names or shapes differ from the configs".into()).into());
        }
        for (dst, src) in params.tensors_mut().into_iter().zip(values) {
            dst.copy_from_slice(&src);
        }
        Ok(MoeModel {
            encoder: meta.encoder,
            config: meta.config,
            taxonomy_hash: meta.taxonomy_hash,
            level_codes: meta.level_codes,
            params,
        })
    }
}

impl Params {
    /// All-zero parameters shaped for the given configs and head widths.
    pub fn zeros(encoder: &EncoderConfig, config: &MoeConfig, head_widths: &[usize]) -> Params {
        let d = encoder.dense_dim();
        let r = encoder.routing_dim();
        let (e, h) = (config.experts_per_level, config.expert_hidden_dim);
        Params {
            tables: EncoderTables {
                title: Matrix::zeros(encoder.hash_buckets, encoder.text_dim),
                category: Matrix::zeros(encoder.hash_buckets, encoder.text_dim),
                fields: (0..encoder.fields.len())
                    .map(|f| Matrix::zeros(encoder.field_slots(f), encoder.cat_dim))
                    .collect(),
            },
            levels: head_widths
                .iter()
                .map(|&k| LevelParams {
                    gate_w: Matrix::zeros(r, e),
                    gate_b: vec![0.0; e],
                    experts: (0..e)
                        .map(|_| Expert {
                            w1: Matrix::zeros(d, h),
                            b1: vec![0.0; h],
                            w2: Matrix::zeros(h, h),
                            b2: vec![0.0; h],
                        })
                        .collect(),
                    head_w: Matrix::zeros(h, k),
                    head_b: vec![0.0; k],
                })
                .collect(),
            semantic_w: Matrix::zeros(h, config.semantic_classes),
            semantic_b: vec![0.0; config.semantic_classes],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::{record, small_model, tiny_taxonomy};
    use super::*;
    use crate::taxonomy::NodeSpec;

    #[test]
    fn round_trip_is_bit_exact() {
        let m = small_model(2, 9);
        let mut buf = Vec::new();
        m.save(&mut buf).unwrap();
        let back = MoeModel::load(buf.as_slice(), Some(&tiny_taxonomy())).unwrap();
        assert_eq!(back, m);
        let fv = m.encode(&record("blue kettle", "BU1"));
        assert_eq!(back.forward(&fv).unwrap(), m.forward(&fv).unwrap());
    }

    #[test]
    fn taxonomy_mismatch() {
        let m = small_model(2, 9);
        let mut buf = Vec::new();
        m.save(&mut buf).unwrap();
        let other = Taxonomy::from_nodes(vec![NodeSpec {
            code: "Z".into(),
            name: "z".into(),
            definition: String::new(),
            parent: None,
            level: 1,
        }])
        .unwrap();
        let err = MoeModel::load(buf.as_slice(), Some(&other)).unwrap_err();
        assert!(matches!(err, CheckpointError::TaxonomyMismatch { .. }));
    }

    #[test]
    fn truncation_and_version() {
        let m = small_model(1, 0);
        let mut buf = Vec::new();
        m.save(&mut buf).unwrap();
        let err = MoeModel::load(&buf[..buf.len() - 1], None).unwrap_err();
        assert!(matches!(err, CheckpointError::Container(ContainerError::Truncated)));
        buf[4] = 9;
        let err = MoeModel::load(buf.as_slice(), None).unwrap_err();
        assert!(matches!(err, CheckpointError::Container(ContainerError::Version(9))));
    }
}
