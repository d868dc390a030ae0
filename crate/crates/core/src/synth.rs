//! Synthetic check-in logs with a planted preference signal, used as a
//! desk-scale verification substrate.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkin::CheckIn;
use crate::error::{Error, Result};
use crate::num::{real, Real};

/// Shape and signal strength of a generated log.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub users: usize,
    pub pois: usize,
    pub regions: usize,
    /// Time slots per day; must divide 24.
    pub slots: usize,
    /// Probability that a check-in hits the user's preferred
    /// (POI, slot, region) pattern; 0 is uniform noise, 1 is pure signal.
    pub strength: f64,
    pub checkins_per_user: usize,
    pub preferred_per_user: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            users: 50,
            pois: 100,
            regions: 4,
            slots: 3,
            strength: 0.9,
            checkins_per_user: 40,
            preferred_per_user: 5,
            seed: 42,
        }
    }
}

// Midnight UTC, so hour-of-day arithmetic lines up with slot indices.
const BASE_TIMESTAMP: i64 = 1_300_060_800;

/// Generates a planted-preference check-in log.
///
/// Every user gets a home region, a favorite time slot, and a small
/// preferred-POI set inside their home region. Each of their check-ins
/// follows the preference with probability `strength` and is uniform noise
/// otherwise. One check-in per user per day, so a temporal split keeps the
/// same behavioral pattern on both sides. Deterministic per seed.
pub fn generate_synthetic<T: Real>(spec: &SyntheticSpec) -> Result<Vec<CheckIn<T>>> {
    if spec.users == 0 || spec.pois == 0 || spec.regions == 0 || spec.checkins_per_user == 0 {
        return Err(Error::Config("synthetic spec counts must be positive".into()));
    }
    if spec.slots == 0 || 24 % spec.slots != 0 {
        return Err(Error::Config(format!("slots must divide 24, got {}", spec.slots)));
    }
    if !(0.0..=1.0).contains(&spec.strength) {
        return Err(Error::Config(format!("strength must be in [0, 1], got {}", spec.strength)));
    }
    if spec.preferred_per_user == 0 {
        return Err(Error::Config("preferred_per_user must be positive".into()));
    }
    if spec.pois < spec.regions {
        return Err(Error::Config("need at least one POI per region".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let slot_hours = 24 / spec.slots;

    // Regions sit on a coarse grid, far enough apart that POIs of different
    // regions are hundreds of kilometers apart.
    let region_center = |g: usize| -> (f64, f64) {
        (-36.0 + 8.0 * (g % 10) as f64, -70.0 + 10.0 * (g / 10) as f64)
    };

    let poi_coords: Vec<(f64, f64)> = (0..spec.pois)
        .map(|p| {
            let (lat, lon) = region_center(p % spec.regions);
            (
                lat + rng.random_range(-0.15..0.15),
                lon + rng.random_range(-0.15..0.15),
            )
        })
        .collect();

    let mut region_pois: Vec<Vec<usize>> = vec![Vec::new(); spec.regions];
    for p in 0..spec.pois {
        region_pois[p % spec.regions].push(p);
    }

    let preferred: Vec<Vec<usize>> = (0..spec.users)
        .map(|u| {
            let mut pool = region_pois[u % spec.regions].clone();
            pool.shuffle(&mut rng);
            pool.truncate(spec.preferred_per_user);
            pool
        })
        .collect();

    let mut out = Vec::with_capacity(spec.users * spec.checkins_per_user);
    for u in 0..spec.users {
        let favorite_slot = u % spec.slots;
        for day in 0..spec.checkins_per_user {
            let planted = spec.strength > 0.0 && rng.random_bool(spec.strength);
            let (poi, slot) = if planted {
                let p = preferred[u][rng.random_range(0..preferred[u].len())];
                (p, favorite_slot)
            } else {
                (rng.random_range(0..spec.pois), rng.random_range(0..spec.slots))
            };
            let hour = slot * slot_hours + rng.random_range(0..slot_hours);
            let minute = rng.random_range(0..59);
            let timestamp =
                BASE_TIMESTAMP + (day as i64) * 86_400 + (hour as i64) * 3600 + (minute as i64) * 60 + u as i64 % 60;
            let (lat, lon) = poi_coords[poi];
            out.push(CheckIn::new(
                format!("u{u}"),
                format!("p{poi}"),
                real::<T>(lat),
                real::<T>(lon),
                timestamp,
                None,
            )?);
        }
    }
    Ok(out)
}
