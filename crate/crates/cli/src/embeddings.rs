use std::fmt::Write;

use clap::ValueEnum;
use csirff_core::DatasetRecord;
use csirff_neural::Network;

use crate::error::Result;
use crate::pipeline::samples;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum EmbeddingStage {
    /// Encoder representation `r`.
    EncoderR,
    /// Unit-norm projection `z`.
    ProjectionZ,
}

/// One row per record: label, channel tag, SNR, then the embedding.
pub fn export_embeddings(
    net: &mut Network<f32>,
    records: &[DatasetRecord],
    stage: EmbeddingStage,
    batch_size: usize,
) -> Result<String> {
    let idx: Vec<usize> = (0..records.len()).collect();
    let s = samples(records, &idx)?;
    let mut out = String::new();
    let mut header = false;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = s.batch(chunk);
        let e = match stage {
            EmbeddingStage::EncoderR => net.represent(&x)?,
            EmbeddingStage::ProjectionZ => net.project(&x)?,
        };
        let d = e.shape()[1];
        if !header {
            out.push_str("label,channel_tag,snr_db");
            for k in 0..d {
                write!(out, ",e{k}").unwrap();
            }
            out.push('\n');
            header = true;
        }
        for (row, &i) in e.data().chunks(d).zip(chunk) {
            let r = &records[i];
            write!(out, "{},{},{}", r.label, r.channel_tag.name(), r.snr_db()).unwrap();
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
    }
    Ok(out)
}
