use crate::error::ConfigError;
use crate::model::Topology;
use crate::netsim::{propagation_nanos, Nanos};

/// Jitter-free propagation delay along sensor, gateway, on-premise node and
/// cloud for one site. Serialization is excluded.
pub fn propagation_offset(topology: &Topology, site_id: u16) -> Result<Nanos, ConfigError> {
    let site = topology
        .site(site_id)
        .ok_or_else(|| ConfigError::Topology(format!("no path from site {site_id} to the cloud")))?;
    Ok(propagation_nanos(&site.sensor_link, site.sensor_distance_km)
        + propagation_nanos(&site.uplink, site.uplink_distance_km)
        + propagation_nanos(&topology.onprem_cloud_link, topology.onprem_cloud_distance_km))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LinkSpec, LinkType};
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    #[test]
    fn zero_distances_give_zero() {
        let mut t = Topology::volcano_default(3);
        for s in &mut t.sites {
            s.uplink_distance_km = 0.0;
            s.sensor_distance_km = 0.0;
        }
        t.onprem_cloud_distance_km = 0.0;
        for s in 0..6 {
            assert_eq!(propagation_offset(&t, s).unwrap(), 0);
        }
    }

    #[test]
    fn single_fiber_hop() {
        let mut t = Topology::volcano_default(3);
        t.sites[0].sensor_distance_km = 0.0;
        t.sites[0].uplink = LinkSpec::preset(LinkType::Fiber1G);
        t.sites[0].uplink_distance_km = 100.0;
        t.onprem_cloud_distance_km = 0.0;
        assert_eq!(propagation_offset(&t, 0).unwrap(), 850_000);
    }

    #[test]
    fn unknown_site_is_a_configuration_error() {
        assert!(propagation_offset(&Topology::volcano_default(3), 99).is_err());
    }

    /// Shortest sensor-to-cloud path over an explicit graph of every node.
    fn dijkstra_offset(t: &Topology, site_idx: usize) -> Nanos {
        // nodes: sensor(i) = 2i, gateway(i) = 2i + 1, onprem = 2n, cloud = 2n + 1
        let n = t.sites.len();
        let mut adj: Vec<Vec<(usize, Nanos)>> = vec![Vec::new(); 2 * n + 2];
        for (i, s) in t.sites.iter().enumerate() {
            adj[2 * i].push((2 * i + 1, propagation_nanos(&s.sensor_link, s.sensor_distance_km)));
            adj[2 * i + 1].push((2 * n, propagation_nanos(&s.uplink, s.uplink_distance_km)));
        }
        adj[2 * n].push((2 * n + 1, propagation_nanos(&t.onprem_cloud_link, t.onprem_cloud_distance_km)));
        let mut dist = vec![Nanos::MAX; 2 * n + 2];
        let mut heap = BinaryHeap::new();
        dist[2 * site_idx] = 0;
        heap.push(Reverse((0, 2 * site_idx)));
        while let Some(Reverse((d, u))) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &(v, w) in &adj[u] {
                if d + w < dist[v] {
                    dist[v] = d + w;
                    heap.push(Reverse((d + w, v)));
                }
            }
        }
        dist[2 * n + 1]
    }

    #[test]
    fn matches_graph_shortest_path_for_every_site() {
        let t = Topology::volcano_default(3);
        for (i, s) in t.sites.iter().enumerate() {
            assert_eq!(propagation_offset(&t, s.site_id).unwrap(), dijkstra_offset(&t, i));
        }
    }
}
