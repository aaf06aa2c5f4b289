//! Byte-granularity heap randomization.
//!
//! Conventional allocators, randomized or not, hand out chunks whose
//! addresses are multiples of the pointer width. Pointer spraying relies on
//! that: a repeated pointer-width pattern is read back intact from any
//! word-aligned position. This crate shifts every chunk by a uniform random
//! number of bytes in `0..pointer_width`, so a sprayed pointer is read at a
//! random byte rotation and only matches with probability `1/pointer_width`.
//!
//! Misaligned chunks are only costly when an access crosses a cache-line or
//! page border. The [`Arena`] places small chunks inside one cache line and
//! medium chunks inside one page, so the randomization never introduces such
//! accesses for them.
//!
//! Modules:
//!
//! * [`arena`] and [`size_class`]: the allocator.
//! * [`addr_filter`]: exclusion of byte-shift-independent addresses
//!   (`0x35353535`) from 32-bit arenas.
//! * [`spray`]: attack model with exact enumeration and Monte Carlo.
//! * [`membench`]: aligned/unaligned/border access microbenchmark.
//! * [`trace`]: trace format, synthetic traces and replay.
//! * [`cli`]: the `ruma` command line.

pub mod addr_filter;
pub mod arena;
pub mod cli;
pub mod config;
pub mod membench;
pub mod size_class;
pub mod spray;
pub mod stats;
pub mod trace;

pub use addr_filter::{is_bsi_address, range_contains_bsi, AddressRange, FilterVerdict};
pub use arena::{AllocError, AllocId, Allocation, Arena};
pub use config::{ArenaConfig, ConfigError, PointerWidth};
pub use stats::{ArenaStats, ReplayStats};
