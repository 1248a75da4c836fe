//! Link geometry from GPS fixes: WGS-84 geodetic/ECEF conversion, local
//! East-North-Up angles, track interpolation and antenna-pattern lookup.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// WGS-84 semi-major axis, meters.
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS-84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;

/// Largest TX/RX timestamp mismatch accepted by [`link_geometry`].
pub const MAX_FIX_SKEW_NS: i64 = 1_000_000_000;

fn e2<T: Real>() -> T {
    let f = T::lit(WGS84_F);
    f * (T::lit(2.0) - f)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoFix<T> {
    pub time_ns: i64,
    pub lat_deg: T,
    pub lon_deg: T,
    pub alt_m: T,
}

impl<T: Real> GeoFix<T> {
    pub fn new(time_ns: i64, lat_deg: T, lon_deg: T, alt_m: T) -> Self {
        Self {
            time_ns,
            lat_deg,
            lon_deg,
            alt_m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ninety = T::lit(90.0);
        let one_eighty = T::lit(180.0);
        if !(self.lat_deg.abs() <= ninety) || !(self.lon_deg.abs() <= one_eighty) {
            return Err(Error::OutOfRange(format!(
                "fix at {} ns has lat {} / lon {}",
                self.time_ns, self.lat_deg, self.lon_deg
            )));
        }
        if !self.alt_m.is_finite() {
            return Err(Error::OutOfRange(format!(
                "fix at {} ns has non-finite altitude",
                self.time_ns
            )));
        }
        Ok(())
    }
}

/// Earth-centred, Earth-fixed position in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ecef<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Ecef<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    pub fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn scale(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn norm(self) -> T {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

pub fn ecef_from_geodetic<T: Real>(fix: &GeoFix<T>) -> Ecef<T> {
    let a = T::lit(WGS84_A);
    let e2 = e2::<T>();
    let (slat, clat) = fix.lat_deg.to_radians().sin_cos();
    let (slon, clon) = fix.lon_deg.to_radians().sin_cos();
    let n = a / (T::one() - e2 * slat * slat).sqrt();
    Ecef::new(
        (n + fix.alt_m) * clat * clon,
        (n + fix.alt_m) * clat * slon,
        (n * (T::one() - e2) + fix.alt_m) * slat,
    )
}

/// Inverse transform by fixed-point iteration on latitude; returns
/// `(lat_deg, lon_deg, alt_m)`.
pub fn geodetic_from_ecef<T: Real>(p: Ecef<T>) -> (T, T, T) {
    let a = T::lit(WGS84_A);
    let e2 = e2::<T>();
    let rho = (p.x * p.x + p.y * p.y).sqrt();
    let lon = p.y.atan2(p.x);
    let mut lat = p.z.atan2(rho * (T::one() - e2));
    let mut alt = T::zero();
    for _ in 0..8 {
        let (s, c) = lat.sin_cos();
        let n = a / (T::one() - e2 * s * s).sqrt();
        alt = rho * c + (p.z + e2 * n * s) * s - n;
        lat = p.z.atan2(rho * (T::one() - e2 * n / (n + alt)));
    }
    (lat.to_degrees(), lon.to_degrees(), alt)
}

/// East-North-Up components of `target - origin` in the frame at `origin`.
pub fn enu_offset<T: Real>(origin: &GeoFix<T>, target: Ecef<T>) -> [T; 3] {
    let d = target.sub(ecef_from_geodetic(origin));
    let (slat, clat) = origin.lat_deg.to_radians().sin_cos();
    let (slon, clon) = origin.lon_deg.to_radians().sin_cos();
    let east = -slon * d.x + clon * d.y;
    let north = -slat * clon * d.x - slat * slon * d.y + clat * d.z;
    let up = clat * clon * d.x + clat * slon * d.y + slat * d.z;
    [east, north, up]
}

/// ECEF point displaced from `origin` by an East-North-Up vector.
pub fn ecef_from_enu<T: Real>(origin: &GeoFix<T>, enu: [T; 3]) -> Ecef<T> {
    let [e, n, u] = enu;
    let (slat, clat) = origin.lat_deg.to_radians().sin_cos();
    let (slon, clon) = origin.lon_deg.to_radians().sin_cos();
    let d = Ecef::new(
        -slon * e - slat * clon * n + clat * clon * u,
        clon * e - slat * slon * n + clat * slon * u,
        clat * n + slat * u,
    );
    ecef_from_geodetic(origin).add(d)
}

/// Geodetic fix at an ENU offset from `origin`, keeping `origin`'s timestamp.
pub fn fix_from_enu<T: Real>(origin: &GeoFix<T>, enu: [T; 3]) -> GeoFix<T> {
    let (lat, lon, alt) = geodetic_from_ecef(ecef_from_enu(origin, enu));
    GeoFix::new(origin.time_ns, lat, lon, alt)
}

/// `(azimuth_deg in [0, 360), elevation_deg, horizontal range)` of an ENU vector.
fn az_el<T: Real>(enu: [T; 3]) -> (T, T, T) {
    let [e, n, u] = enu;
    let horiz = (e * e + n * n).sqrt();
    let mut az = e.atan2(n).to_degrees();
    if az < T::zero() {
        az = az + T::lit(360.0);
    }
    if az >= T::lit(360.0) {
        az = az - T::lit(360.0);
    }
    (az, u.atan2(horiz).to_degrees(), horiz)
}

/// Distance and pointing angles between TX and RX at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkGeometry<T> {
    pub time_ns: i64,
    /// Straight-line (ECEF) distance, meters.
    pub distance: T,
    /// Horizontal range in the TX's local tangent plane, meters.
    pub ground_distance: T,
    pub azimuth_tx_to_rx: T,
    pub elevation_tx_to_rx: T,
    pub azimuth_rx_to_tx: T,
    pub elevation_rx_to_tx: T,
    pub tx_alt: T,
    pub rx_alt: T,
    /// Coincident endpoints: azimuths are meaningless and reported as zero.
    pub degenerate: bool,
}

pub fn link_geometry<T: Real>(tx: &GeoFix<T>, rx: &GeoFix<T>) -> Result<LinkGeometry<T>> {
    tx.validate()?;
    rx.validate()?;
    if (tx.time_ns - rx.time_ns).abs() > MAX_FIX_SKEW_NS {
        return Err(Error::invalid(format!(
            "fixes {} ns apart (limit {MAX_FIX_SKEW_NS} ns)",
            (tx.time_ns - rx.time_ns).abs()
        )));
    }
    let ptx = ecef_from_geodetic(tx);
    let prx = ecef_from_geodetic(rx);
    let distance = prx.sub(ptx).norm();
    let time_ns = tx.time_ns.max(rx.time_ns);
    if distance == T::zero() {
        return Ok(LinkGeometry {
            time_ns,
            distance,
            ground_distance: T::zero(),
            azimuth_tx_to_rx: T::zero(),
            elevation_tx_to_rx: T::zero(),
            azimuth_rx_to_tx: T::zero(),
            elevation_rx_to_tx: T::zero(),
            tx_alt: tx.alt_m,
            rx_alt: rx.alt_m,
            degenerate: true,
        });
    }
    let (az_tr, el_tr, ground) = az_el(enu_offset(tx, prx));
    let (az_rt, el_rt, _) = az_el(enu_offset(rx, ptx));
    Ok(LinkGeometry {
        time_ns,
        distance,
        ground_distance: ground,
        azimuth_tx_to_rx: az_tr,
        elevation_tx_to_rx: el_tr,
        azimuth_rx_to_tx: az_rt,
        elevation_rx_to_tx: el_rt,
        tx_alt: tx.alt_m,
        rx_alt: rx.alt_m,
        degenerate: false,
    })
}

/// Position at time `t` by piecewise-linear interpolation in ECEF.
///
/// `log` must be sorted by time. Knot times return the knot unchanged.
pub fn interpolate_track<T: Real>(log: &[GeoFix<T>], t: i64) -> Result<GeoFix<T>> {
    let (first, last) = match (log.first(), log.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::invalid("empty flight log")),
    };
    if t < first.time_ns || t > last.time_ns {
        return Err(Error::OutOfRange(format!(
            "time {t} ns outside flight log span [{}, {}]",
            first.time_ns, last.time_ns
        )));
    }
    let idx = log.partition_point(|f| f.time_ns < t);
    if log[idx].time_ns == t {
        return Ok(log[idx]);
    }
    let (a, b) = (&log[idx - 1], &log[idx]);
    let w = T::lit((t - a.time_ns) as f64 / (b.time_ns - a.time_ns) as f64);
    let pa = ecef_from_geodetic(a);
    let pb = ecef_from_geodetic(b);
    let (lat, lon, alt) = geodetic_from_ecef(pa.add(pb.sub(pa).scale(w)));
    Ok(GeoFix::new(t, lat, lon, alt))
}

/// Time-ordered fixes for one platform.
#[derive(Debug, Clone, PartialEq)]
pub struct FlightLog<T> {
    fixes: Vec<GeoFix<T>>,
}

impl<T: Real> FlightLog<T> {
    pub fn new(fixes: Vec<GeoFix<T>>) -> Result<Self> {
        for f in &fixes {
            f.validate()?;
        }
        if let Some(w) = fixes.windows(2).find(|w| w[1].time_ns <= w[0].time_ns) {
            return Err(Error::invalid(format!(
                "flight log not strictly increasing in time at {} ns",
                w[1].time_ns
            )));
        }
        Ok(Self { fixes })
    }

    pub fn fixes(&self) -> &[GeoFix<T>] {
        &self.fixes
    }

    pub fn at(&self, t: i64) -> Result<GeoFix<T>> {
        interpolate_track(&self.fixes, t)
    }

    pub fn span(&self) -> Option<(i64, i64)> {
        Some((self.fixes.first()?.time_ns, self.fixes.last()?.time_ns))
    }
}

impl<T: Real + Serialize + serde::de::DeserializeOwned> FlightLog<T> {
    /// Reads a `time_ns,lat_deg,lon_deg,alt_m` CSV.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile {
                path: path.to_path_buf(),
            },
            _ => Error::io(path, e),
        })?;
        let mut rdr = csv::Reader::from_reader(BufReader::new(file));
        let headers = rdr.headers().map_err(|e| Error::malformed(path, e))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["time_ns", "lat_deg", "lon_deg", "alt_m"] {
            return Err(Error::malformed(
                path,
                format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>()),
            ));
        }
        let fixes = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<GeoFix<T>>, _>>()
            .map_err(|e| Error::malformed(path, e))?;
        Self::new(fixes).map_err(|e| Error::malformed(path, e))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut wtr = csv::Writer::from_writer(BufWriter::new(file));
        for f in &self.fixes {
            wtr.serialize(f).map_err(|e| Error::malformed(path, e))?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))
    }
}

/// Antenna gain on a regular azimuth/elevation grid, dBi.
///
/// Azimuth nodes cover `[0, 360)` and wrap; elevation nodes cover `[-90, 90]`
/// inclusive. Lookups interpolate bilinearly.
#[derive(Debug, Clone, PartialEq)]
pub struct AntennaPattern<T> {
    az_step: T,
    el_step: T,
    n_az: usize,
    n_el: usize,
    /// Row-major in elevation: `gains[el_idx * n_az + az_idx]`.
    gains: Vec<T>,
}

impl<T: Real> AntennaPattern<T> {
    pub fn isotropic(gain_dbi: T) -> Self {
        Self::from_fn(T::lit(90.0), T::lit(90.0), |_, _| gain_dbi)
            .expect("90 degree grid is regular")
    }

    /// Samples `f(az_deg, el_deg)` on a grid with the given node spacing.
    pub fn from_fn(az_step: T, el_step: T, f: impl Fn(T, T) -> T) -> Result<Self> {
        let (n_az, n_el) = grid_shape(az_step, el_step)?;
        let mut gains = Vec::with_capacity(n_az * n_el);
        for j in 0..n_el {
            let el = T::lit(-90.0) + el_step * T::lit(j as f64);
            for i in 0..n_az {
                gains.push(f(az_step * T::lit(i as f64), el));
            }
        }
        Ok(Self {
            az_step,
            el_step,
            n_az,
            n_el,
            gains,
        })
    }

    /// Bilinear gain at `(az_deg, el_deg)`; azimuth wraps, elevation clamps.
    pub fn gain(&self, az_deg: T, el_deg: T) -> T {
        let full = T::lit(360.0);
        let mut az = az_deg % full;
        if az < T::zero() {
            az = az + full;
        }
        let el = el_deg.max(T::lit(-90.0)).min(T::lit(90.0)) + T::lit(90.0);

        let fa = az / self.az_step;
        let i0 = fa.floor().to_usize().unwrap_or(0).min(self.n_az - 1);
        let wa = fa - T::lit(i0 as f64);
        let i1 = (i0 + 1) % self.n_az;

        let fe = el / self.el_step;
        let j0 = fe.floor().to_usize().unwrap_or(0).min(self.n_el - 1);
        let j1 = (j0 + 1).min(self.n_el - 1);
        let we = if j1 == j0 {
            T::zero()
        } else {
            fe - T::lit(j0 as f64)
        };

        let g = |i: usize, j: usize| self.gains[j * self.n_az + i];
        let lo = g(i0, j0) * (T::one() - wa) + g(i1, j0) * wa;
        let hi = g(i0, j1) * (T::one() - wa) + g(i1, j1) * wa;
        lo * (T::one() - we) + hi * we
    }
}

fn grid_shape<T: Real>(az_step: T, el_step: T) -> Result<(usize, usize)> {
    let count = |span: f64, step: T, what: &str| -> Result<usize> {
        let n = span / step.as_f64();
        if !(step > T::zero()) || (n - n.round()).abs() > 1e-9 || n.round() < 1.0 {
            return Err(Error::invalid(format!(
                "{what} step {step} does not divide {span} degrees"
            )));
        }
        Ok(n.round() as usize)
    };
    Ok((
        count(360.0, az_step, "azimuth")?,
        count(180.0, el_step, "elevation")? + 1,
    ))
}

#[derive(Debug, Serialize, Deserialize)]
struct PatternRow {
    az_deg: f64,
    el_deg: f64,
    gain_dbi: f64,
}

impl<T: Real> AntennaPattern<T> {
    /// Reads an `az_deg,el_deg,gain_dbi` CSV holding a complete regular grid.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile {
                path: path.to_path_buf(),
            },
            _ => Error::io(path, e),
        })?;
        let mut rdr = csv::Reader::from_reader(BufReader::new(file));
        let rows = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<PatternRow>, _>>()
            .map_err(|e| Error::malformed(path, e))?;
        Self::from_rows(&rows).map_err(|e| Error::malformed(path, e))
    }

    fn from_rows(rows: &[PatternRow]) -> Result<Self> {
        let mut azs: Vec<f64> = rows.iter().map(|r| r.az_deg).collect();
        let mut els: Vec<f64> = rows.iter().map(|r| r.el_deg).collect();
        for v in [&mut azs, &mut els] {
            v.sort_by(f64::total_cmp);
            v.dedup();
        }
        if azs.len() < 2 || els.len() < 2 {
            return Err(Error::invalid("pattern grid needs at least 2x2 nodes"));
        }
        let az_step = T::lit(azs[1] - azs[0]);
        let el_step = T::lit(els[1] - els[0]);
        let (n_az, n_el) = grid_shape(az_step, el_step)?;
        if azs.len() != n_az || els.len() != n_el || rows.len() != n_az * n_el {
            return Err(Error::invalid(format!(
                "pattern grid incomplete: {} rows for {n_az} x {n_el} nodes",
                rows.len()
            )));
        }
        let mut gains = vec![T::nan(); n_az * n_el];
        for r in rows {
            let i = (r.az_deg / az_step.as_f64()).round() as usize;
            let j = ((r.el_deg + 90.0) / el_step.as_f64()).round() as usize;
            if i >= n_az || j >= n_el {
                return Err(Error::invalid(format!(
                    "node ({}, {}) off the regular grid",
                    r.az_deg, r.el_deg
                )));
            }
            gains[j * n_az + i] = T::lit(r.gain_dbi);
        }
        if gains.iter().any(|g| g.is_nan()) {
            return Err(Error::invalid("pattern grid has duplicate or missing nodes"));
        }
        Ok(Self {
            az_step,
            el_step,
            n_az,
            n_el,
            gains,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut wtr = csv::Writer::from_writer(BufWriter::new(file));
        for j in 0..self.n_el {
            for i in 0..self.n_az {
                wtr.serialize(PatternRow {
                    az_deg: self.az_step.as_f64() * i as f64,
                    el_deg: -90.0 + self.el_step.as_f64() * j as f64,
                    gain_dbi: self.gains[j * self.n_az + i].as_f64(),
                })
                .map_err(|e| Error::malformed(path, e))?;
            }
        }
        wtr.flush().map_err(|e| Error::io(path, e))
    }
}

/// Sum of TX and RX gains toward each other, in dB. Subtracting it from a
/// received power leaves the omnidirectional-equivalent channel loss.
pub fn antenna_correction<T: Real>(
    geom: &LinkGeometry<T>,
    tx_pattern: &AntennaPattern<T>,
    rx_pattern: &AntennaPattern<T>,
) -> T {
    tx_pattern.gain(geom.azimuth_tx_to_rx, geom.elevation_tx_to_rx)
        + rx_pattern.gain(geom.azimuth_rx_to_tx, geom.elevation_rx_to_tx)
}
