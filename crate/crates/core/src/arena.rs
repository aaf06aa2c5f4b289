//! The randomized size-class arena.
//!
//! Every chunk reserves `pointer_width` bytes on top of the request and is
//! handed out at `slot_base + offset`, with `offset` drawn uniformly from
//! `0..pointer_width`. The padding sits after the chunk: `offset` bytes
//! before it, `pointer_width - offset` after it (plus stride rounding).
//!
//! Slots of small and medium classes are border-free by construction (see
//! [`crate::size_class`]), so a request with `size + pointer_width <=
//! cache_line` never straddles a line and one with `size + pointer_width <=
//! page_size` never straddles a page. Larger requests are carved from whole
//! pages with the offset applied and no border handling.

use std::alloc::{self, Layout};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ptr::NonNull;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::addr_filter::{AddressRange, FilterVerdict, SlotFilter, BSI_STRIDE};
use crate::config::{ArenaConfig, ConfigError};
use crate::size_class::{round_up, Placement, SizeClassTable, Tier};
use crate::stats::{ArenaStats, ClassOccupancy, FilterCounters};

/// Opaque handle of a live allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct AllocId(u64);

impl AllocId {
    pub fn raw(self) -> u64 {
        self.0
    }
}

impl fmt::Display for AllocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AllocError {
    #[error("arena exhausted while serving {requested} bytes")]
    OutOfCapacity { requested: u64 },
    #[error("unknown allocation handle {0}")]
    UnknownHandle(AllocId),
    #[error("allocation {0} was already freed or reallocated")]
    DoubleFree(AllocId),
    #[error("unsupported alignment {0}")]
    UnsupportedAlignment(u64),
    #[error("allocation data is only available in backed mode")]
    NotBacked,
}

/// Record of one live chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Allocation {
    pub id: AllocId,
    /// Address handed to the caller.
    pub start: u64,
    /// Start of the slot (or page span) backing the chunk.
    pub slot_base: u64,
    pub requested: u64,
    /// Bytes of the slot or span held by the chunk.
    pub reserved: u64,
    /// Random shift applied within the slot.
    pub offset: u64,
    /// `None` for chunks carved from the large region.
    pub size_class_index: Option<usize>,
    /// Served through [`Arena::alloc_aligned`]; never randomized.
    pub aligned: bool,
    /// Extra stride from promotion past a dropped candidate class.
    pub promotion_bytes: u64,
    /// Extra nominal reservation caused by the per-chunk padding.
    pub padding_bytes: u64,
}

impl Allocation {
    pub fn end(&self) -> u64 {
        self.start + self.requested
    }
}

/// True iff the non-empty span `[start, start+len)` touches two blocks of
/// size `border`.
pub fn crosses_border(start: u64, len: u64, border: u64) -> bool {
    len > 0 && start / border != (start + len - 1) / border
}

enum Region {
    Simulated,
    Backed { ptr: NonNull<u8>, layout: Layout },
}

// SAFETY: the backing region is exclusively owned by the arena.
unsafe impl Send for Region {}

impl Drop for Region {
    fn drop(&mut self) {
        if let Region::Backed { ptr, layout } = self {
            // SAFETY: allocated in `Arena::new` with this exact layout.
            unsafe { alloc::dealloc(ptr.as_ptr(), *layout) }
        }
    }
}

/// Page-granular carve-out of the arena range: first fit over freed spans,
/// then a bump pointer.
struct PageHeap {
    page: u64,
    bump: u64,
    limit: u64,
    free: BTreeMap<u64, u64>,
}

impl PageHeap {
    fn alloc(&mut self, len: u64) -> Option<u64> {
        debug_assert_eq!(len % self.page, 0);
        if let Some((&start, &span)) = self.free.iter().find(|(_, &span)| span >= len) {
            self.free.remove(&start);
            if span > len {
                self.free.insert(start + len, span - len);
            }
            return Some(start);
        }
        let start = self.bump;
        let end = start.checked_add(len)?;
        if end > self.limit {
            return None;
        }
        self.bump = end;
        Some(start)
    }

    fn release(&mut self, mut start: u64, mut len: u64) {
        if let Some((&prev, &prev_len)) = self.free.range(..start).next_back() {
            if prev + prev_len == start {
                self.free.remove(&prev);
                start = prev;
                len += prev_len;
            }
        }
        if let Some(next_len) = self.free.remove(&(start + len)) {
            len += next_len;
        }
        if start + len == self.bump {
            self.bump = start;
        } else {
            self.free.insert(start, len);
        }
    }
}

#[derive(Default)]
struct ClassState {
    free: Vec<u64>,
    quarantine: Vec<u64>,
    live: u64,
    capacity: u64,
}

pub struct Arena {
    cfg: ArenaConfig,
    table: SizeClassTable,
    rng: ChaCha8Rng,
    filter: SlotFilter,
    region: Region,
    base: u64,
    pages: PageHeap,
    classes: Vec<ClassState>,
    large_quarantine: Vec<(u64, u64)>,
    live: HashMap<AllocId, Allocation>,
    next_id: u64,
    offset_histogram: Vec<u64>,
    totals: Totals,
}

#[derive(Default)]
struct Totals {
    live_bytes: u64,
    reserved_bytes: u64,
    peak_reserved: u64,
    promotions: u64,
    promotion_bytes: u64,
    padding_bytes: u64,
    aligned_live: u64,
    aligned_requests: u64,
    allocations: u64,
    large_live: u64,
    large_reserved: u64,
}

impl fmt::Debug for Arena {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Arena")
            .field("base", &format_args!("{:#x}", self.base))
            .field("live", &self.live.len())
            .field("reserved_bytes", &self.totals.reserved_bytes)
            .finish_non_exhaustive()
    }
}

impl Arena {
    pub fn new(cfg: ArenaConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let usable = cfg.arena_capacity / cfg.page_size * cfg.page_size;
        let (region, base) = if cfg.backed {
            let layout = Layout::from_size_align(usable as usize, cfg.page_size as usize)
                .map_err(|_| ConfigError::BackingUnavailable(usable))?;
            // SAFETY: layout has non-zero size (capacity >= one page).
            let ptr = NonNull::new(unsafe { alloc::alloc_zeroed(layout) })
                .ok_or(ConfigError::BackingUnavailable(usable))?;
            let base = ptr.as_ptr() as u64;
            (Region::Backed { ptr, layout }, base)
        } else {
            (Region::Simulated, cfg.base())
        };
        let table = SizeClassTable::new(&cfg);
        let classes = (0..table.len()).map(|_| ClassState::default()).collect();
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
            filter: SlotFilter::new(cfg.filter_active(), cfg.filter_strict),
            offset_histogram: vec![0; cfg.pointer_width.usize()],
            pages: PageHeap {
                page: cfg.page_size,
                bump: base,
                limit: base + usable,
                free: BTreeMap::new(),
            },
            table,
            region,
            base,
            classes,
            large_quarantine: Vec::new(),
            live: HashMap::new(),
            next_id: 0,
            totals: Totals::default(),
            cfg,
        })
    }

    pub fn config(&self) -> &ArenaConfig {
        &self.cfg
    }

    pub fn size_classes(&self) -> &SizeClassTable {
        &self.table
    }

    /// First address managed by the arena.
    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn is_backed(&self) -> bool {
        matches!(self.region, Region::Backed { .. })
    }

    pub fn live_count(&self) -> usize {
        self.live.len()
    }

    pub fn get(&self, id: AllocId) -> Option<&Allocation> {
        self.live.get(&id)
    }

    pub fn live_allocations(&self) -> impl Iterator<Item = &Allocation> {
        self.live.values()
    }

    pub fn peak_reserved(&self) -> u64 {
        self.totals.peak_reserved
    }

    /// Allocates `size` bytes at a randomized address.
    pub fn alloc(&mut self, size: u64) -> Result<Allocation, AllocError> {
        let placement = self.table.place(size);
        self.serve(size, placement, false)
    }

    /// Allocates `size` bytes aligned to `align`. The result is never
    /// randomized and is counted in the stats as an aligned request.
    pub fn alloc_aligned(&mut self, size: u64, align: u64) -> Result<Allocation, AllocError> {
        let placement = self
            .table
            .place_aligned(size, align)
            .ok_or(AllocError::UnsupportedAlignment(align))?;
        self.serve(size, placement, true)
    }

    pub fn free(&mut self, id: AllocId) -> Result<(), AllocError> {
        let a = self.live.remove(&id).ok_or_else(|| self.missing(id))?;
        match a.size_class_index {
            Some(class) => {
                let state = &mut self.classes[class];
                state.free.push(a.slot_base);
                state.live -= 1;
            }
            None => {
                self.pages.release(a.slot_base, a.reserved);
                self.totals.large_live -= 1;
                self.totals.large_reserved -= a.reserved;
            }
        }
        let t = &mut self.totals;
        t.live_bytes -= a.requested;
        t.reserved_bytes -= a.reserved;
        t.padding_bytes -= a.padding_bytes;
        t.promotion_bytes -= a.promotion_bytes;
        if a.promotion_bytes > 0 {
            t.promotions -= 1;
        }
        if a.aligned {
            t.aligned_live -= 1;
        }
        Ok(())
    }

    /// Moves `id` to a fresh chunk of `new_size` bytes. In backed mode the
    /// first `min(old, new)` bytes are preserved. The old handle is consumed;
    /// on failure it stays live.
    pub fn realloc(&mut self, id: AllocId, new_size: u64) -> Result<Allocation, AllocError> {
        let old = *self.live.get(&id).ok_or_else(|| self.missing(id))?;
        let new = self.alloc(new_size)?;
        if let Region::Backed { .. } = self.region {
            let n = old.requested.min(new_size) as usize;
            // SAFETY: both ranges lie inside the backing region and belong
            // to distinct live allocations, so they do not overlap.
            unsafe {
                std::ptr::copy_nonoverlapping(old.start as *const u8, new.start as *mut u8, n);
            }
        }
        self.free(id)?;
        Ok(new)
    }

    /// Bytes of a live allocation. Backed mode only.
    pub fn bytes(&self, id: AllocId) -> Result<&[u8], AllocError> {
        let a = self.backed_allocation(id)?;
        // SAFETY: the span lies inside the zero-initialised backing region
        // and no mutable borrow can coexist with `&self`.
        Ok(unsafe { std::slice::from_raw_parts(a.start as *const u8, a.requested as usize) })
    }

    /// Mutable bytes of a live allocation. Backed mode only.
    pub fn bytes_mut(&mut self, id: AllocId) -> Result<&mut [u8], AllocError> {
        let a = self.backed_allocation(id)?;
        // SAFETY: live spans are pairwise disjoint and `&mut self` rules out
        // any other borrow of the region.
        Ok(unsafe { std::slice::from_raw_parts_mut(a.start as *mut u8, a.requested as usize) })
    }

    pub fn stats(&self) -> ArenaStats {
        let line = self.cfg.cache_line;
        let page = self.cfg.page_size;
        let (mut line_straddles, mut page_straddles) = (0, 0);
        for a in self.live.values() {
            line_straddles += crosses_border(a.start, a.requested, line) as u64;
            page_straddles += crosses_border(a.start, a.requested, page) as u64;
        }
        let t = &self.totals;
        ArenaStats {
            live_allocations: self.live.len() as u64,
            live_bytes: t.live_bytes,
            reserved_bytes: t.reserved_bytes,
            overhead_ratio: if t.live_bytes == 0 {
                1.0
            } else {
                t.reserved_bytes as f64 / t.live_bytes as f64
            },
            offset_histogram: self.offset_histogram.clone(),
            line_straddles,
            page_straddles,
            per_class: self
                .table
                .classes()
                .iter()
                .zip(&self.classes)
                .map(|(c, s)| ClassOccupancy {
                    max_size: c.max_size,
                    stride: c.stride,
                    live: s.live,
                    capacity: s.capacity,
                    quarantined: s.quarantine.len() as u64,
                })
                .collect(),
            large_live: t.large_live,
            large_reserved: t.large_reserved,
            padding_bytes: t.padding_bytes,
            promotions: t.promotions,
            promotion_bytes: t.promotion_bytes,
            aligned_live: t.aligned_live,
            aligned_requests: t.aligned_requests,
            total_allocations: t.allocations,
            quarantined: self
                .classes
                .iter()
                .map(|s| s.quarantine.len() as u64)
                .sum::<u64>()
                + self.large_quarantine.len() as u64,
            filter: FilterCounters {
                enabled: self.filter.enabled(),
                spans_checked: self.filter.spans_checked,
                candidate_checks: self.filter.candidate_checks,
                rejections: self.filter.rejections,
            },
        }
    }

    /// Verifies every placement invariant over the live set: slot
    /// containment, border rules, BSI exclusion and pairwise disjointness.
    pub fn check_invariants(&self) -> Result<(), String> {
        let w = self.cfg.pointer_width.bytes();
        let mut spans: Vec<(u64, u64)> = Vec::with_capacity(self.live.len());
        for a in self.live.values() {
            if a.start < a.slot_base || a.end() > a.slot_base + a.reserved {
                return Err(format!("{a:?} escapes its slot"));
            }
            if a.offset >= w || (!self.cfg.randomize || a.aligned) && a.offset != 0 {
                return Err(format!("{a:?} has an invalid offset"));
            }
            if let Some(msg) = self.border_violation(a) {
                return Err(msg);
            }
            if self.filter.enabled() && a.requested < BSI_STRIDE {
                let span = AddressRange::new(a.start as u32, a.requested.max(1))
                    .map_err(|e| e.to_string())?;
                if crate::addr_filter::range_contains_bsi(span) {
                    return Err(format!("{a:?} spans a BSI address"));
                }
            }
            spans.push((a.start, a.requested.max(1)));
        }
        spans.sort_unstable();
        for pair in spans.windows(2) {
            if pair[0].0 + pair[0].1 > pair[1].0 {
                return Err(format!("overlap at {:#x}", pair[1].0));
            }
        }
        Ok(())
    }

    fn border_violation(&self, a: &Allocation) -> Option<String> {
        let w = self.cfg.pointer_width.bytes();
        let need = a.requested + w;
        if need <= self.cfg.cache_line && crosses_border(a.start, a.requested, self.cfg.cache_line)
        {
            return Some(format!("{a:?} straddles a cache line"));
        }
        if need <= self.cfg.page_size && crosses_border(a.start, a.requested, self.cfg.page_size) {
            return Some(format!("{a:?} straddles a page"));
        }
        None
    }

    fn missing(&self, id: AllocId) -> AllocError {
        if id.0 < self.next_id {
            AllocError::DoubleFree(id)
        } else {
            AllocError::UnknownHandle(id)
        }
    }

    fn backed_allocation(&self, id: AllocId) -> Result<Allocation, AllocError> {
        if !self.is_backed() {
            return Err(AllocError::NotBacked);
        }
        self.live.get(&id).copied().ok_or_else(|| self.missing(id))
    }

    fn draw_offset(&mut self, aligned: bool) -> u64 {
        if self.cfg.randomize && !aligned {
            self.rng.random_range(0..self.cfg.pointer_width.bytes())
        } else {
            0
        }
    }

    fn accepts(&mut self, base: u64, len: u64, offset: u64, size: u64) -> bool {
        if !self.filter.enabled() {
            return true;
        }
        let Ok(slot) = AddressRange::new(base as u32, len) else {
            return false;
        };
        self.filter.filter_slot(slot, offset, size) == FilterVerdict::Accept
    }

    fn serve(
        &mut self,
        size: u64,
        placement: Placement,
        aligned: bool,
    ) -> Result<Allocation, AllocError> {
        let (slot_base, offset, reserved, class, promotion_bytes) = match placement {
            Placement::Slot {
                class,
                promotion_bytes,
            } => {
                let (base, offset) = self.acquire_slot(class, size, aligned)?;
                (
                    base,
                    offset,
                    self.table.get(class).stride,
                    Some(class),
                    promotion_bytes,
                )
            }
            Placement::Large { reserved } => {
                let (base, offset) = self.acquire_span(reserved, size, aligned)?;
                (base, offset, reserved, None, 0)
            }
        };
        let padding_bytes = if aligned {
            0
        } else {
            self.table.padding_bytes(size)
        };
        let a = Allocation {
            id: AllocId(self.next_id),
            start: slot_base + offset,
            slot_base,
            requested: size,
            reserved,
            offset,
            size_class_index: class,
            aligned,
            promotion_bytes,
            padding_bytes,
        };
        self.next_id += 1;
        debug_assert!(self.border_violation(&a).is_none());

        let t = &mut self.totals;
        t.allocations += 1;
        t.live_bytes += size;
        t.reserved_bytes += reserved;
        t.peak_reserved = t.peak_reserved.max(t.reserved_bytes);
        t.padding_bytes += padding_bytes;
        t.promotion_bytes += promotion_bytes;
        t.promotions += (promotion_bytes > 0) as u64;
        if aligned {
            t.aligned_live += 1;
            t.aligned_requests += 1;
        } else if self.cfg.randomize {
            self.offset_histogram[offset as usize] += 1;
        } else {
            self.offset_histogram[0] += 1;
        }
        match class {
            Some(c) => self.classes[c].live += 1,
            None => {
                t.large_live += 1;
                t.large_reserved += reserved;
            }
        }
        self.live.insert(a.id, a);
        Ok(a)
    }

    fn acquire_slot(
        &mut self,
        class: usize,
        size: u64,
        aligned: bool,
    ) -> Result<(u64, u64), AllocError> {
        let stride = self.table.get(class).stride;
        loop {
            if let Some(base) = self.classes[class].free.pop() {
                let offset = self.draw_offset(aligned);
                if self.accepts(base, stride, offset, size) {
                    return Ok((base, offset));
                }
                self.classes[class].quarantine.push(base);
                continue;
            }
            // Free list exhausted: give quarantined slots another chance with
            // a fresh offset before carving a new run.
            let mut i = 0;
            while i < self.classes[class].quarantine.len() {
                let base = self.classes[class].quarantine[i];
                let offset = self.draw_offset(aligned);
                if self.accepts(base, stride, offset, size) {
                    self.classes[class].quarantine.swap_remove(i);
                    return Ok((base, offset));
                }
                i += 1;
            }
            self.carve_run(class, size)?;
        }
    }

    fn carve_run(&mut self, class: usize, size: u64) -> Result<(), AllocError> {
        let page = self.cfg.page_size;
        let c = *self.table.get(class);
        let run = self
            .pages
            .alloc(page)
            .ok_or(AllocError::OutOfCapacity { requested: size })?;
        let state = &mut self.classes[class];
        state.capacity += c.slots_per_run;
        state
            .free
            .extend((0..c.slots_per_run).rev().map(|i| run + i * c.stride));
        debug_assert!(c.tier != Tier::Line || self.cfg.cache_line.is_multiple_of(c.stride));
        Ok(())
    }

    fn acquire_span(
        &mut self,
        reserved: u64,
        size: u64,
        aligned: bool,
    ) -> Result<(u64, u64), AllocError> {
        let mut i = 0;
        while i < self.large_quarantine.len() {
            let (base, len) = self.large_quarantine[i];
            if len == reserved {
                let offset = self.draw_offset(aligned);
                if self.accepts(base, len, offset, size) {
                    self.large_quarantine.swap_remove(i);
                    return Ok((base, offset));
                }
            }
            i += 1;
        }
        debug_assert_eq!(reserved, round_up(reserved, self.cfg.page_size));
        loop {
            let base = self
                .pages
                .alloc(reserved)
                .ok_or(AllocError::OutOfCapacity { requested: size })?;
            let offset = self.draw_offset(aligned);
            if self.accepts(base, reserved, offset, size) {
                return Ok((base, offset));
            }
            self.large_quarantine.push((base, reserved));
        }
    }
}
