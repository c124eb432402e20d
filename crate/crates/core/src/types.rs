//! Identifiers and units shared by every module.

use std::fmt;

/// Simulated time and durations, in microseconds.
pub type Micros = u64;

/// Object and capacity sizes, in bits.
pub type Bits = u64;

pub const MICROS_PER_SEC: u64 = 1_000_000;

pub const BITS_PER_BYTE: u64 = 8;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u32);

        impl $name {
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(
    /// A data object (a file in the dataset).
    ObjectId,
    "f"
);
id_type!(TaskId, "t");
id_type!(
    /// A transient compute/storage node. The dispatcher treats each node as one executor
    /// with several CPU slots.
    ExecutorId,
    "e"
);

/// A storage endpoint: the shared persistent store or one node's local cache.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StoreId {
    Persistent(u32),
    Transient(ExecutorId),
}

impl StoreId {
    pub fn is_persistent(self) -> bool {
        matches!(self, StoreId::Persistent(_))
    }
}

impl fmt::Display for StoreId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StoreId::Persistent(id) => write!(f, "p{id}"),
            StoreId::Transient(e) => write!(f, "{e}"),
        }
    }
}

/// Converts seconds (possibly fractional) to whole microseconds, rounding to nearest.
pub fn secs_to_micros(secs: f64) -> Micros {
    (secs * MICROS_PER_SEC as f64).round() as Micros
}

pub fn micros_to_secs(us: Micros) -> f64 {
    us as f64 / MICROS_PER_SEC as f64
}
