//! Synthetic multi-domain image corpus, split roles, PPM I/O and
//! photometric preprocessing.

mod adjust;
mod disk;
mod ppm;
mod sample;
mod splits;
mod synth;

pub use adjust::{adjust_brightness, adjust_contrast, adjust_image, Adjustment};
pub use disk::{load_split, read_manifest, write_dataset, ManifestRow, MANIFEST_FILE};
pub use ppm::{load_ppm, read_ppm, save_ppm, write_ppm};
pub use sample::{to_batch, Domain, FakeKind, ImageSample};
pub use splits::{make_splits, DomainSplits, Split, SplitSpec, SplitDataset};
pub use synth::{gen_fake, gen_real, gen_real_ids, histogram_l1, seam_gradient, DomainCorpus};
