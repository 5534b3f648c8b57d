//! Summer-season selection and sliding decadal windows.
//!
//! A season is labeled by the calendar year of its November: season y
//! holds Nov-Dec of year y and Jan-Feb of year y+1, so daily coverage of
//! 1999-2022 yields the 23 seasons 1999..=2021.

use crate::dataset::{Date, GriddedDataset};
use crate::error::{Error, Result};

/// Season start year of a date, `None` outside November-February.
pub fn season_of(date: Date) -> Option<i32> {
    match date.month {
        11 | 12 => Some(date.year),
        1 | 2 => Some(date.year - 1),
        _ => None,
    }
}

/// The retained summer panel: season labels and the per-time season slot.
#[derive(Debug, Clone)]
pub struct SeasonPanel {
    /// Sorted distinct season start years.
    pub seasons: Vec<i32>,
    /// For each dataset time index: the slot into `seasons`, or None for
    /// dates outside November-February.
    pub slot_of_time: Vec<Option<usize>>,
}

impl SeasonPanel {
    pub fn n_seasons(&self) -> usize {
        self.seasons.len()
    }

    /// Dataset time indices belonging to one season slot.
    pub fn times_of_season(&self, slot: usize) -> Vec<usize> {
        self.slot_of_time
            .iter()
            .enumerate()
            .filter_map(|(t, s)| (*s == Some(slot)).then_some(t))
            .collect()
    }

    /// Dataset time indices of a consecutive season-slot range.
    pub fn times_of_slots(&self, range: std::ops::RangeInclusive<usize>) -> Vec<usize> {
        self.slot_of_time
            .iter()
            .enumerate()
            .filter_map(|(t, s)| match s {
                Some(slot) if range.contains(slot) => Some(t),
                _ => None,
            })
            .collect()
    }
}

/// Partition the dataset's dates into summer seasons, dropping Mar-Oct.
pub fn summer_seasons(ds: &GriddedDataset) -> SeasonPanel {
    let labels: Vec<Option<i32>> = ds.times.iter().map(|&d| season_of(d)).collect();
    let mut seasons: Vec<i32> = labels.iter().flatten().copied().collect();
    seasons.sort_unstable();
    seasons.dedup();
    let slot_of_time = labels
        .iter()
        .map(|l| l.map(|y| seasons.binary_search(&y).unwrap()))
        .collect();
    SeasonPanel {
        seasons,
        slot_of_time,
    }
}

/// One sliding window over season slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowSpec {
    /// 1-based window id.
    pub id: usize,
    /// Inclusive season-slot range.
    pub first_slot: usize,
    pub last_slot: usize,
    /// Calendar label, e.g. "1999-2009" for seasons 1999..=2008.
    pub label: String,
}

/// Sliding windows of `width` seasons advancing by `step` (23 seasons at
/// width 10, step 1 give the 14 decadal windows).
pub fn decadal_windows(panel: &SeasonPanel, width: usize, step: usize) -> Result<Vec<WindowSpec>> {
    if width == 0 || step == 0 {
        return Err(Error::Config("window width and step must be >= 1".into()));
    }
    let n = panel.n_seasons();
    if n < width {
        return Err(Error::InsufficientData {
            what: "seasons for one window".into(),
            needed: width,
            have: n,
        });
    }
    let mut windows = Vec::new();
    let mut first = 0usize;
    let mut id = 1usize;
    while first + width <= n {
        let last = first + width - 1;
        let label = format!(
            "{}-{}",
            panel.seasons[first],
            panel.seasons[last] + 1
        );
        windows.push(WindowSpec {
            id,
            first_slot: first,
            last_slot: last,
            label,
        });
        first += step;
        id += 1;
    }
    Ok(windows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Site;
    use crate::simulate::season_dates;

    #[test]
    fn season_boundary_rule() {
        assert_eq!(season_of("2000-01-15".parse().unwrap()), Some(1999));
        assert_eq!(season_of("1999-11-30".parse().unwrap()), Some(1999));
        assert_eq!(season_of("1999-12-31".parse().unwrap()), Some(1999));
        assert_eq!(season_of("2000-02-29".parse().unwrap()), Some(1999));
        assert_eq!(season_of("2000-03-01".parse().unwrap()), None);
        assert_eq!(season_of("2000-11-01".parse().unwrap()), Some(2000));
    }

    fn daily_dataset(start_year: i32, n_seasons: usize) -> GriddedDataset {
        let sites = vec![Site {
            id: "a".into(),
            lon: 0.0,
            lat: 0.0,
        }];
        GriddedDataset::new(sites, season_dates(start_year, n_seasons)).unwrap()
    }

    #[test]
    fn full_calendar_yields_23_seasons_and_14_windows() {
        // daily coverage of the 1999-2022 summers
        let ds = daily_dataset(1999, 23);
        let panel = summer_seasons(&ds);
        assert_eq!(panel.n_seasons(), 23);
        assert_eq!(panel.seasons.first(), Some(&1999));
        assert_eq!(panel.seasons.last(), Some(&2021));
        // every retained date belongs to exactly one season
        assert!(panel.slot_of_time.iter().all(|s| s.is_some()));

        let windows = decadal_windows(&panel, 10, 1).unwrap();
        assert_eq!(windows.len(), 14);
        assert_eq!(windows[0].label, "1999-2009");
        assert_eq!(windows[13].label, "2012-2022");
        assert_eq!(windows[13].id, 14);
    }

    #[test]
    fn window_edge_cases() {
        let ds = daily_dataset(2000, 10);
        let panel = summer_seasons(&ds);
        let windows = decadal_windows(&panel, 10, 1).unwrap();
        assert_eq!(windows.len(), 1);
        assert!(matches!(
            decadal_windows(&panel, 11, 1),
            Err(Error::InsufficientData { .. })
        ));
        let w2 = decadal_windows(&panel, 4, 3).unwrap();
        assert_eq!(w2.len(), 3); // slots 0-3, 3-6, 6-9
    }

    #[test]
    fn season_slots_partition_the_times() {
        let ds = daily_dataset(1999, 3);
        let panel = summer_seasons(&ds);
        let total: usize = (0..panel.n_seasons())
            .map(|s| panel.times_of_season(s).len())
            .sum();
        assert_eq!(total, ds.n_times());
        let r = panel.times_of_slots(0..=1);
        assert_eq!(
            r.len(),
            panel.times_of_season(0).len() + panel.times_of_season(1).len()
        );
    }
}
