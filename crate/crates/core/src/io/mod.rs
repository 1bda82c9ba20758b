//! File formats: the NRRD subset for images and the binary scribble file.

mod nrrd;
mod scribbles;

pub use nrrd::{
    decode_nrrd, encode_f32, encode_label_map, encode_nrrd, encode_prob_map, encode_volume,
    read_label_map, read_nrrd, read_prob_map, read_volume, write_f32, write_label_map,
    write_prob_map, write_volume, NrrdHeader, NrrdImage, SampleType, Samples,
};
pub use scribbles::{
    decode_scribbles, encode_scribbles, read_scribbles, write_scribbles, SCRIBBLE_MAGIC,
    SCRIBBLE_VERSION,
};
