//! Matrix files and model persistence.

mod container;
mod persist;
mod text;

pub use container::{
    decode_matrix, encode_matrix, is_container, load_matrix, load_sections, read_matrix, read_sections, save_matrix,
    save_sections, write_matrix, write_sections, Sections, FORMAT_VERSION, HEADER_LEN, MAGIC,
};
pub use persist::{load, save, to_sections, Persist};
pub use text::{load_csv, read_csv, save_csv, write_csv, CsvMatrix};
