//! Coordinates backing the default site distances.

use super::infra::LinkType;

/// Mean Earth radius (IUGG), km.
const EARTH_RADIUS_KM: f64 = 6371.0088;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coordinates {
    pub lat_deg: f64,
    pub lon_deg: f64,
}

pub struct VolcanoSite {
    pub name: &'static str,
    pub coordinates: Coordinates,
    pub uplink: LinkType,
}

const fn at(lat_deg: f64, lon_deg: f64) -> Coordinates {
    Coordinates { lat_deg, lon_deg }
}

/// Observatory office in Hilo, where the on-premise data center sits.
pub const HILO: Coordinates = at(19.7297, -155.0900);

/// Cloud backend location (US west coast region, Boardman, Oregon).
pub const CLOUD_REGION: Coordinates = at(45.8399, -119.7006);

/// Summit coordinates of the six monitored volcanoes. Sites near inhabited
/// areas reach Hilo over fiber, remote ones over LTE-M.
pub const VOLCANO_SITES: [VolcanoSite; 6] = [
    VolcanoSite { name: "Kilauea", coordinates: at(19.421, -155.287), uplink: LinkType::Fiber1G },
    VolcanoSite { name: "Mauna Loa", coordinates: at(19.475, -155.608), uplink: LinkType::Fiber1G },
    VolcanoSite { name: "Mauna Kea", coordinates: at(19.821, -155.468), uplink: LinkType::Fiber1G },
    VolcanoSite { name: "Hualalai", coordinates: at(19.692, -155.870), uplink: LinkType::LteM },
    VolcanoSite { name: "Haleakala", coordinates: at(20.709, -156.253), uplink: LinkType::LteM },
    VolcanoSite {
        name: "Kamaehuakanaloa",
        coordinates: at(18.920, -155.270),
        uplink: LinkType::LteM,
    },
];

/// Haversine great-circle distance.
pub fn great_circle_km(a: Coordinates, b: Coordinates) -> f64 {
    let (p1, p2) = (a.lat_deg.to_radians(), b.lat_deg.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon_deg - a.lon_deg).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().asin()
}
