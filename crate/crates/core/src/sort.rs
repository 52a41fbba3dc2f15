//! The sorting algorithms measured by the use-case harness.
//!
//! All inputs hold byte-range values (0..=255) regardless of element width,
//! so the same numeric content can be sorted as u8/u16/u32/u64.

use std::fmt;
use std::str::FromStr;

/// Element types the harness can sort: fixed-width unsigned integers whose
/// values fit in a byte.
pub trait SortValue: Copy + Ord {
    fn from_byte(b: u8) -> Self;
    fn to_index(self) -> usize;
}

macro_rules! impl_sort_value {
    ($($t:ty),*) => {$(
        impl SortValue for $t {
            fn from_byte(b: u8) -> Self { b as $t }
            fn to_index(self) -> usize { self as usize }
        }
    )*};
}

impl_sort_value!(u8, u16, u32, u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Algorithm {
    Bubble,
    Insertion,
    Quick,
    Merge,
    /// The standard library's comparison sort.
    Libsort,
    Counting,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Bubble,
        Algorithm::Insertion,
        Algorithm::Quick,
        Algorithm::Merge,
        Algorithm::Libsort,
        Algorithm::Counting,
    ];

    /// Token used on the command line and in CSV output.
    pub fn token(self) -> &'static str {
        match self {
            Algorithm::Bubble => "bubble",
            Algorithm::Insertion => "insertion",
            Algorithm::Quick => "quick",
            Algorithm::Merge => "merge",
            Algorithm::Libsort => "libsort",
            Algorithm::Counting => "counting",
        }
    }

    /// Row label in the result table.
    pub fn display_name(self) -> &'static str {
        match self {
            Algorithm::Bubble => "Bubble Sort",
            Algorithm::Insertion => "Insertion Sort",
            Algorithm::Quick => "Quicksort",
            Algorithm::Merge => "Merge Sort",
            Algorithm::Libsort => "Stdlib Sort",
            Algorithm::Counting => "Counting Sort",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Algorithm, String> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.token() == s)
            .ok_or_else(|| format!("unknown algorithm `{s}`"))
    }
}

pub fn run_sort<T: SortValue>(algorithm: Algorithm, data: &mut [T]) {
    match algorithm {
        Algorithm::Bubble => bubble_sort(data),
        Algorithm::Insertion => insertion_sort(data),
        Algorithm::Quick => quicksort(data),
        Algorithm::Merge => merge_sort(data),
        Algorithm::Libsort => libsort(data),
        Algorithm::Counting => counting_sort(data),
    }
}

pub fn bubble_sort<T: Ord>(data: &mut [T]) {
    let mut n = data.len();
    while n > 1 {
        let mut last_swap = 0;
        for i in 1..n {
            if data[i - 1] > data[i] {
                data.swap(i - 1, i);
                last_swap = i;
            }
        }
        n = last_swap;
    }
}

pub fn insertion_sort<T: Ord + Copy>(data: &mut [T]) {
    for i in 1..data.len() {
        let value = data[i];
        let mut j = i;
        while j > 0 && data[j - 1] > value {
            data[j] = data[j - 1];
            j -= 1;
        }
        data[j] = value;
    }
}

pub fn quicksort<T: Ord + Copy>(data: &mut [T]) {
    // median-of-three pivot, recurse into the smaller side to bound stack depth
    fn sort<T: Ord + Copy>(mut data: &mut [T]) {
        while data.len() > 16 {
            place_median_first(data);
            let split = hoare_partition(data);
            let (lo, hi) = data.split_at_mut(split);
            if lo.len() < hi.len() {
                sort(lo);
                data = hi;
            } else {
                sort(hi);
                data = lo;
            }
        }
        insertion_sort(data);
    }

    fn place_median_first<T: Ord + Copy>(data: &mut [T]) {
        let n = data.len();
        let (a, b, c) = (0, n / 2, n - 1);
        let median = if (data[a] <= data[b]) == (data[b] <= data[c]) {
            b
        } else if (data[b] <= data[a]) == (data[a] <= data[c]) {
            a
        } else {
            c
        };
        data.swap(0, median);
    }

    // Hoare partition with the pivot element at the front; the split point
    // is always interior, so both sides shrink.
    fn hoare_partition<T: Ord + Copy>(data: &mut [T]) -> usize {
        let pivot = data[0];
        let mut i: isize = -1;
        let mut j = data.len() as isize;
        loop {
            loop {
                i += 1;
                if data[i as usize] >= pivot {
                    break;
                }
            }
            loop {
                j -= 1;
                if data[j as usize] <= pivot {
                    break;
                }
            }
            if i >= j {
                return (j + 1) as usize;
            }
            data.swap(i as usize, j as usize);
        }
    }

    sort(data);
}

pub fn merge_sort<T: Ord + Copy>(data: &mut [T]) {
    let n = data.len();
    if n < 2 {
        return;
    }
    let mut aux = data.to_vec();
    let mut width = 1;
    while width < n {
        for lo in (0..n).step_by(width * 2) {
            let mid = (lo + width).min(n);
            let hi = (lo + width * 2).min(n);
            merge(&data[lo..mid], &data[mid..hi], &mut aux[lo..hi]);
        }
        data.copy_from_slice(&aux);
        width *= 2;
    }

    fn merge<T: Ord + Copy>(left: &[T], right: &[T], out: &mut [T]) {
        let (mut i, mut j) = (0, 0);
        for slot in out.iter_mut() {
            if i < left.len() && (j >= right.len() || left[i] <= right[j]) {
                *slot = left[i];
                i += 1;
            } else {
                *slot = right[j];
                j += 1;
            }
        }
    }
}

pub fn libsort<T: Ord>(data: &mut [T]) {
    data.sort_unstable_by(|a, b| a.cmp(b));
}

/// Histogram sort over the 256 possible byte values: no comparisons, one
/// pass to count and one to write back.
pub fn counting_sort<T: SortValue>(data: &mut [T]) {
    let mut counts = [0usize; 256];
    for v in data.iter() {
        let idx = v.to_index();
        assert!(idx < 256, "counting sort input outside byte range");
        counts[idx] += 1;
    }
    let mut out = data.iter_mut();
    for (value, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            *out.next().expect("counts sum to input length") = T::from_byte(value as u8);
        }
    }
}
