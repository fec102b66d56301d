//! Bitset domains with a trail for chronological backtracking.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Conflict;

pub(crate) type PropResult = Result<(), Conflict>;

#[derive(Debug, Clone, Copy)]
enum TrailEntry {
    Word { index: u32, old: u64 },
    Bounds { var: u32, min: i32, max: i32, size: u32 },
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Store {
    base: Vec<i32>,
    first_word: Vec<u32>,
    word_count: Vec<u32>,
    words: Vec<u64>,
    min: Vec<i32>,
    max: Vec<i32>,
    size: Vec<u32>,
    trail: Vec<TrailEntry>,
    /// Variables modified since the propagation engine last looked.
    pub(crate) touched: Vec<u32>,
}

impl Store {
    pub(crate) fn num_vars(&self) -> usize {
        self.base.len()
    }

    pub(crate) fn add(&mut self, lo: i32, hi: i32) -> u32 {
        let id = self.base.len() as u32;
        let span = (hi as i64 - lo as i64 + 1) as u64;
        let nwords = span.div_ceil(64) as u32;
        self.base.push(lo);
        self.first_word.push(self.words.len() as u32);
        self.word_count.push(nwords);
        for w in 0..nwords as u64 {
            let bits_here = (span - w * 64).min(64);
            self.words.push(if bits_here == 64 {
                u64::MAX
            } else {
                (1u64 << bits_here) - 1
            });
        }
        self.min.push(lo);
        self.max.push(hi);
        self.size.push(span as u32);
        id
    }

    #[inline]
    pub(crate) fn min(&self, v: u32) -> i32 {
        self.min[v as usize]
    }

    #[inline]
    pub(crate) fn max(&self, v: u32) -> i32 {
        self.max[v as usize]
    }

    #[inline]
    pub(crate) fn size(&self, v: u32) -> u32 {
        self.size[v as usize]
    }

    #[inline]
    pub(crate) fn is_fixed(&self, v: u32) -> bool {
        self.size[v as usize] == 1
    }

    #[inline]
    fn locate(&self, v: u32, val: i32) -> (usize, u64) {
        let off = (val - self.base[v as usize]) as u32;
        let idx = self.first_word[v as usize] + off / 64;
        (idx as usize, 1u64 << (off % 64))
    }

    #[inline]
    pub(crate) fn contains(&self, v: u32, val: i32) -> bool {
        let vi = v as usize;
        if val < self.min[vi] || val > self.max[vi] {
            return false;
        }
        let (idx, bit) = self.locate(v, val);
        self.words[idx] & bit != 0
    }

    pub(crate) fn values(&self, v: u32) -> Vec<i32> {
        let mut out = Vec::with_capacity(self.size(v) as usize);
        let mut val = self.min(v);
        let max = self.max(v);
        while val <= max {
            if self.contains(v, val) {
                out.push(val);
            }
            val += 1;
        }
        out
    }

    pub(crate) fn trail_len(&self) -> usize {
        self.trail.len()
    }

    pub(crate) fn undo_to(&mut self, len: usize) {
        while self.trail.len() > len {
            match self.trail.pop().unwrap() {
                TrailEntry::Word { index, old } => self.words[index as usize] = old,
                TrailEntry::Bounds { var, min, max, size } => {
                    let vi = var as usize;
                    self.min[vi] = min;
                    self.max[vi] = max;
                    self.size[vi] = size;
                }
            }
        }
    }

    fn save_bounds(&mut self, v: u32) {
        let vi = v as usize;
        self.trail.push(TrailEntry::Bounds {
            var: v,
            min: self.min[vi],
            max: self.max[vi],
            size: self.size[vi],
        });
    }

    fn next_at_or_above(&self, v: u32, from: i32) -> i32 {
        let mut val = from;
        let max = self.max(v);
        while val <= max {
            let (idx, bit) = self.locate(v, val);
            let word = self.words[idx];
            let shift = bit.trailing_zeros();
            let rest = word >> shift;
            if rest != 0 {
                return val + rest.trailing_zeros() as i32;
            }
            val += (64 - shift) as i32;
        }
        i32::MAX
    }

    fn prev_at_or_below(&self, v: u32, from: i32) -> i32 {
        let mut val = from;
        let min = self.min(v);
        while val >= min {
            let (idx, bit) = self.locate(v, val);
            let word = self.words[idx];
            let shift = bit.trailing_zeros();
            let rest = if shift == 63 { word } else { word & ((bit << 1) - 1) };
            if rest != 0 {
                return val - (shift as i32 - (63 - rest.leading_zeros()) as i32);
            }
            val -= shift as i32 + 1;
        }
        i32::MIN
    }

    /// Removes `val`; `Ok(true)` if the domain changed.
    pub(crate) fn remove(&mut self, v: u32, val: i32) -> Result<bool, Conflict> {
        if !self.contains(v, val) {
            return Ok(false);
        }
        if self.size(v) == 1 {
            return Err(Conflict);
        }
        self.save_bounds(v);
        let (idx, bit) = self.locate(v, val);
        self.trail.push(TrailEntry::Word {
            index: idx as u32,
            old: self.words[idx],
        });
        self.words[idx] &= !bit;
        let vi = v as usize;
        self.size[vi] -= 1;
        if val == self.min[vi] {
            self.min[vi] = self.next_at_or_above(v, val + 1);
        }
        if val == self.max[vi] {
            self.max[vi] = self.prev_at_or_below(v, val - 1);
        }
        self.touched.push(v);
        Ok(true)
    }

    pub(crate) fn set_min(&mut self, v: u32, m: i32) -> Result<bool, Conflict> {
        if m <= self.min(v) {
            return Ok(false);
        }
        if m > self.max(v) {
            return Err(Conflict);
        }
        self.save_bounds(v);
        let mut removed = 0u32;
        let mut val = self.min(v);
        while val < m {
            let (idx, bit) = self.locate(v, val);
            let shift = bit.trailing_zeros() as i32;
            let upto = (m - val).min(64 - shift);
            let mask = if upto == 64 {
                u64::MAX
            } else {
                ((1u64 << upto) - 1) << shift
            };
            let old = self.words[idx];
            if old & mask != 0 {
                self.trail.push(TrailEntry::Word { index: idx as u32, old });
                removed += (old & mask).count_ones();
                self.words[idx] = old & !mask;
            }
            val += upto;
        }
        let vi = v as usize;
        self.size[vi] -= removed;
        self.min[vi] = self.next_at_or_above(v, m);
        self.touched.push(v);
        Ok(true)
    }

    pub(crate) fn set_max(&mut self, v: u32, m: i32) -> Result<bool, Conflict> {
        if m >= self.max(v) {
            return Ok(false);
        }
        if m < self.min(v) {
            return Err(Conflict);
        }
        self.save_bounds(v);
        let mut removed = 0u32;
        let mut val = m + 1;
        let max = self.max(v);
        while val <= max {
            let (idx, bit) = self.locate(v, val);
            let shift = bit.trailing_zeros() as i32;
            let upto = (max - val + 1).min(64 - shift);
            let mask = if upto == 64 {
                u64::MAX
            } else {
                ((1u64 << upto) - 1) << shift
            };
            let old = self.words[idx];
            if old & mask != 0 {
                self.trail.push(TrailEntry::Word { index: idx as u32, old });
                removed += (old & mask).count_ones();
                self.words[idx] = old & !mask;
            }
            val += upto;
        }
        let vi = v as usize;
        self.size[vi] -= removed;
        self.max[vi] = self.prev_at_or_below(v, m);
        self.touched.push(v);
        Ok(true)
    }

    pub(crate) fn assign(&mut self, v: u32, val: i32) -> Result<bool, Conflict> {
        if !self.contains(v, val) {
            return Err(Conflict);
        }
        let a = self.set_min(v, val)?;
        let b = self.set_max(v, val)?;
        Ok(a || b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_follow_removals() {
        let mut s = Store::default();
        let v = s.add(-3, 200);
        assert_eq!(s.size(v), 204);
        s.remove(v, -3).unwrap();
        assert_eq!(s.min(v), -2);
        s.set_min(v, 70).unwrap();
        assert_eq!((s.min(v), s.size(v)), (70, 131));
        s.remove(v, 200).unwrap();
        s.remove(v, 199).unwrap();
        assert_eq!(s.max(v), 198);
        s.set_max(v, 127).unwrap();
        assert_eq!((s.min(v), s.max(v), s.size(v)), (70, 127, 58));
        for x in 70..127 {
            s.remove(v, x).unwrap();
        }
        assert!(s.is_fixed(v));
        assert_eq!(s.min(v), 127);
        assert!(s.remove(v, 127).is_err());
    }

    #[test]
    fn undo_restores_everything() {
        let mut s = Store::default();
        let v = s.add(0, 130);
        let mark = s.trail_len();
        s.remove(v, 64).unwrap();
        s.set_min(v, 10).unwrap();
        s.set_max(v, 100).unwrap();
        s.assign(v, 65).unwrap();
        s.undo_to(mark);
        assert_eq!((s.min(v), s.max(v), s.size(v)), (0, 130, 131));
        assert!(s.contains(v, 64));
    }

    #[test]
    fn holes_are_skipped_by_bounds() {
        let mut s = Store::default();
        let v = s.add(0, 9);
        for x in [1, 2, 3, 7, 8] {
            s.remove(v, x).unwrap();
        }
        s.set_min(v, 1).unwrap();
        assert_eq!(s.min(v), 4);
        s.set_max(v, 8).unwrap();
        assert_eq!(s.max(v), 6);
        assert_eq!(s.values(v), vec![4, 5, 6]);
    }
}
