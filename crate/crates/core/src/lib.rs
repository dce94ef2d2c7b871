//! Signal model, channel simulation, synthetic device fingerprints, the
//! least-squares extraction baseline and the dataset pipeline.

pub mod basis;
mod bytes;
pub mod channel;
pub mod dataset;
pub mod devices;
pub mod error;
pub mod features;
pub mod ls;
pub mod ls_classifier;
pub mod rng;
pub mod signal;

pub use channel::{sample_channel, ChannelModel, ChannelModelSpec, ChannelTag, MultipathChannel};
pub use dataset::{
    augment_sample, build_dataset, build_flat_dataset, read_records, split_dataset, write_records, BuildOptions,
    Dataset, DatasetManifest, DatasetRecord, DatasetSplit,
};
pub use devices::{generate_population, DevicePopulation, FingerprintProfile, PopulationConfig};
pub use error::{CoreError, FormatError, Result};
pub use ls::{denoise_average, distance_study, extract_fingerprint_ls, FingerprintEstimate, LsConfig, LsExtractor};
pub use ls_classifier::{train_ls_classifier, LsModel, LsTrainConfig};
pub use rng::RandomStream;
pub use signal::{
    add_awgn, amp_phase_split, compose_csi, AmpPhaseMatrix, CsiVector, DeviceFingerprint, NoiseSpec, SubcarrierGrid,
};
