//! Topologies, routes, sources and the 0-1 routing matrix.
//!
//! Links, routes and sources carry string ids for I/O; internally everything
//! is addressed by dense indices in declaration order.

use std::collections::{HashMap, HashSet};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::utility::AlphaFair;

/// Tolerance on `T_rj + T_jr = T_r`, in seconds.
pub const HOP_DELAY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: String,
    /// Capacity in Mb/s.
    pub capacity: f64,
}

/// One link on a route together with the propagation delays to and from it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hop {
    pub link: usize,
    /// Source to link delay `T_rj`, seconds.
    pub forward: f64,
    /// Link back to source delay `T_jr`, seconds.
    pub backward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub id: String,
    pub source: usize,
    pub hops: Vec<Hop>,
    /// Round-trip time `T_r`, seconds.
    pub round_trip: f64,
}

impl Route {
    pub fn links(&self) -> impl Iterator<Item = usize> + '_ {
        self.hops.iter().map(|h| h.link)
    }

    pub fn uses(&self, link: usize) -> bool {
        self.hops.iter().any(|h| h.link == link)
    }

    pub fn hop_on(&self, link: usize) -> Option<&Hop> {
        self.hops.iter().find(|h| h.link == link)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Source {
    pub id: String,
    pub routes: Vec<usize>,
    pub utility: AlphaFair,
}

#[derive(Debug, Clone)]
pub struct LinkSpec {
    pub id: String,
    pub capacity: f64,
}

#[derive(Debug, Clone)]
pub struct HopSpec {
    pub link: String,
    pub forward: f64,
    pub backward: f64,
}

#[derive(Debug, Clone)]
pub struct RouteSpec {
    pub id: String,
    pub source: String,
    pub hops: Vec<HopSpec>,
    pub round_trip: f64,
}

#[derive(Debug, Clone)]
pub struct SourceSpec {
    pub id: String,
    pub routes: Vec<String>,
    pub weight: f64,
    pub alpha: f64,
}

/// Immutable network description. Safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    links: Vec<Link>,
    routes: Vec<Route>,
    sources: Vec<Source>,
    routes_on_link: Vec<Vec<usize>>,
}

fn check_unique<'a>(ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::DuplicateId(id.to_string()));
        }
    }
    Ok(())
}

/// Validates ids, ownership and per-hop delays, then assembles the model.
pub fn build_network(
    links: &[LinkSpec],
    routes: &[RouteSpec],
    sources: &[SourceSpec],
) -> Result<NetworkModel> {
    check_unique(links.iter().map(|l| l.id.as_str()))?;
    check_unique(routes.iter().map(|r| r.id.as_str()))?;
    check_unique(sources.iter().map(|s| s.id.as_str()))?;

    for l in links {
        if !(l.capacity > 0.0 && l.capacity.is_finite()) {
            return Err(Error::InvalidValue {
                what: "link capacity",
                value: l.capacity,
            });
        }
    }
    let link_index: HashMap<&str, usize> = links
        .iter()
        .enumerate()
        .map(|(i, l)| (l.id.as_str(), i))
        .collect();
    let route_index: HashMap<&str, usize> = routes
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect();
    let source_index: HashMap<&str, usize> = sources
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();

    let mut built_routes = Vec::with_capacity(routes.len());
    for r in routes {
        if r.hops.is_empty() {
            return Err(Error::EmptyRoute(r.id.clone()));
        }
        let source = *source_index
            .get(r.source.as_str())
            .ok_or_else(|| Error::UnknownSource(r.source.clone()))?;
        if !(r.round_trip >= 0.0 && r.round_trip.is_finite()) {
            return Err(Error::InvalidValue {
                what: "round-trip time",
                value: r.round_trip,
            });
        }
        let mut hops = Vec::with_capacity(r.hops.len());
        let mut on_route = HashSet::new();
        for h in &r.hops {
            let link = *link_index
                .get(h.link.as_str())
                .ok_or_else(|| Error::UnknownLink(h.link.clone()))?;
            if !on_route.insert(link) {
                return Err(Error::DuplicateId(format!("{}/{}", r.id, h.link)));
            }
            if h.forward < 0.0 || h.backward < 0.0 {
                return Err(Error::InvalidValue {
                    what: "hop delay",
                    value: h.forward.min(h.backward),
                });
            }
            if (h.forward + h.backward - r.round_trip).abs() > HOP_DELAY_TOLERANCE {
                return Err(Error::HopDelayMismatch {
                    route: r.id.clone(),
                    link: h.link.clone(),
                    forward: h.forward,
                    backward: h.backward,
                    round_trip: r.round_trip,
                });
            }
            hops.push(Hop {
                link,
                forward: h.forward,
                backward: h.backward,
            });
        }
        built_routes.push(Route {
            id: r.id.clone(),
            source,
            hops,
            round_trip: r.round_trip,
        });
    }

    let mut owner: Vec<Option<usize>> = vec![None; routes.len()];
    let mut built_sources = Vec::with_capacity(sources.len());
    for (si, s) in sources.iter().enumerate() {
        if s.routes.is_empty() {
            return Err(Error::SourceWithoutRoutes(s.id.clone()));
        }
        let mut owned = Vec::with_capacity(s.routes.len());
        for rid in &s.routes {
            let ri = *route_index
                .get(rid.as_str())
                .ok_or_else(|| Error::UnknownRoute(rid.clone()))?;
            if let Some(prev) = owner[ri] {
                return Err(Error::RouteOwnership {
                    route: rid.clone(),
                    first: sources[prev].id.clone(),
                    second: s.id.clone(),
                });
            }
            if built_routes[ri].source != si {
                return Err(Error::RouteOwnership {
                    route: rid.clone(),
                    first: routes[ri].source.clone(),
                    second: s.id.clone(),
                });
            }
            owner[ri] = Some(si);
            owned.push(ri);
        }
        built_sources.push(Source {
            id: s.id.clone(),
            routes: owned,
            utility: AlphaFair::new(s.weight, s.alpha)?,
        });
    }
    if let Some(ri) = owner.iter().position(Option::is_none) {
        let r = &built_routes[ri];
        return Err(Error::RouteOwnership {
            route: r.id.clone(),
            first: sources[r.source].id.clone(),
            second: "<none>".into(),
        });
    }

    let mut routes_on_link = vec![Vec::new(); links.len()];
    for (ri, r) in built_routes.iter().enumerate() {
        for j in r.links() {
            routes_on_link[j].push(ri);
        }
    }

    let model = NetworkModel {
        links: links
            .iter()
            .map(|l| Link {
                id: l.id.clone(),
                capacity: l.capacity,
            })
            .collect(),
        routes: built_routes,
        sources: built_sources,
        routes_on_link,
    };
    let rank = model.routing_rank();
    if rank < model.num_links() {
        log::warn!(
            "routing matrix has rank {rank} < {} links; equilibrium prices may not be unique",
            model.num_links()
        );
    }
    Ok(model)
}

impl NetworkModel {
    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn routes(&self) -> &[Route] {
        &self.routes
    }

    pub fn sources(&self) -> &[Source] {
        &self.sources
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn num_routes(&self) -> usize {
        self.routes.len()
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.capacity).collect()
    }

    /// Routes traversing link `j`.
    pub fn routes_on(&self, link: usize) -> &[usize] {
        &self.routes_on_link[link]
    }

    /// Largest round-trip time over all routes.
    pub fn max_round_trip(&self) -> f64 {
        self.routes.iter().map(|r| r.round_trip).fold(0.0, f64::max)
    }

    /// `A_jr = 1` iff link `j` lies on route `r`.
    pub fn routing_matrix(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.num_links(), self.num_routes());
        for (r, route) in self.routes.iter().enumerate() {
            for j in route.links() {
                a[(j, r)] = 1.0;
            }
        }
        a
    }

    pub fn routing_rank(&self) -> usize {
        rank_of(&self.routing_matrix())
    }

    /// Rank of the routing-matrix rows restricted to `links`.
    pub fn routing_rank_of(&self, links: &[usize]) -> usize {
        if links.is_empty() {
            return 0;
        }
        let a = self.routing_matrix();
        rank_of(&a.select_rows(links.iter()))
    }

    /// Link loads `z_j = sum over routes through j of x_r`.
    pub fn link_loads(&self, x: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.num_links()];
        for (r, route) in self.routes.iter().enumerate() {
            for j in route.links() {
                z[j] += x[r];
            }
        }
        z
    }

    /// Per-source aggregate `sum over r in s of x_r`.
    pub fn source_totals(&self, x: &[f64]) -> Vec<f64> {
        self.sources
            .iter()
            .map(|s| s.routes.iter().map(|&r| x[r]).sum())
            .collect()
    }

    /// Maximum rate a source can push: the sum of its routes' bottleneck capacities.
    pub fn max_source_rate(&self, source: usize) -> f64 {
        self.sources[source]
            .routes
            .iter()
            .map(|&r| {
                self.routes[r]
                    .links()
                    .map(|j| self.links[j].capacity)
                    .fold(f64::INFINITY, f64::min)
            })
            .sum()
    }

    pub fn link_index(&self, id: &str) -> Option<usize> {
        self.links.iter().position(|l| l.id == id)
    }

    pub fn route_index(&self, id: &str) -> Option<usize> {
        self.routes.iter().position(|r| r.id == id)
    }

    pub fn source_index(&self, id: &str) -> Option<usize> {
        self.sources.iter().position(|s| s.id == id)
    }

    /// Copy of the model with every capacity multiplied by `factor`.
    pub fn with_scaled_capacities(&self, factor: f64) -> NetworkModel {
        let mut m = self.clone();
        for l in &mut m.links {
            l.capacity *= factor;
        }
        m
    }
}

fn rank_of(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let svd = m.clone().svd(false, false);
    let max_sv = svd.singular_values.max();
    let tol = max_sv * (m.nrows().max(m.ncols()) as f64) * f64::EPSILON;
    svd.singular_values.iter().filter(|&&s| s > tol).count()
}

/// Convenience builder that derives hop delays from per-link one-way delays.
///
/// A packet reaches link `j` after crossing the links before it, so
/// `T_rj` is the sum of the preceding one-way delays and the round trip is
/// twice the sum over the whole route.
#[derive(Debug, Default, Clone)]
pub struct NetworkBuilder {
    links: Vec<(LinkSpec, f64)>,
    sources: Vec<SourceSpec>,
    routes: Vec<(String, String, Vec<String>)>,
}

impl NetworkBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn link(mut self, id: &str, capacity: f64, one_way_delay: f64) -> Self {
        self.add_link(id, capacity, one_way_delay);
        self
    }

    pub fn add_link(&mut self, id: &str, capacity: f64, one_way_delay: f64) {
        self.links.push((
            LinkSpec {
                id: id.to_string(),
                capacity,
            },
            one_way_delay,
        ));
    }

    pub fn source(mut self, id: &str, weight: f64, alpha: f64) -> Self {
        self.add_source(id, weight, alpha);
        self
    }

    pub fn add_source(&mut self, id: &str, weight: f64, alpha: f64) {
        self.sources.push(SourceSpec {
            id: id.to_string(),
            routes: Vec::new(),
            weight,
            alpha,
        });
    }

    pub fn route(mut self, id: &str, source: &str, links: &[&str]) -> Self {
        self.add_route(id, source, links.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn add_route(&mut self, id: &str, source: &str, links: Vec<String>) {
        self.routes
            .push((id.to_string(), source.to_string(), links));
    }

    pub fn build(mut self) -> Result<NetworkModel> {
        let delay: HashMap<&str, f64> = self
            .links
            .iter()
            .map(|(l, d)| (l.id.as_str(), *d))
            .collect();
        let mut route_specs = Vec::with_capacity(self.routes.len());
        for (id, source, links) in &self.routes {
            let mut one_way = Vec::with_capacity(links.len());
            for l in links {
                let d = *delay.get(l.as_str()).ok_or_else(|| Error::UnknownLink(l.clone()))?;
                if !(d >= 0.0 && d.is_finite()) {
                    return Err(Error::InvalidValue {
                        what: "link delay",
                        value: d,
                    });
                }
                one_way.push(d);
            }
            let round_trip = 2.0 * one_way.iter().sum::<f64>();
            let mut before = 0.0;
            let hops = links
                .iter()
                .zip(&one_way)
                .map(|(l, d)| {
                    let hop = HopSpec {
                        link: l.clone(),
                        forward: before,
                        backward: round_trip - before,
                    };
                    before += d;
                    hop
                })
                .collect();
            route_specs.push(RouteSpec {
                id: id.clone(),
                source: source.clone(),
                hops,
                round_trip,
            });
            if let Some(s) = self.sources.iter_mut().find(|s| &s.id == source) {
                s.routes.push(id.clone());
            }
        }
        let links: Vec<LinkSpec> = self.links.iter().map(|(l, _)| l.clone()).collect();
        build_network(&links, &route_specs, &self.sources)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single() -> NetworkModel {
        NetworkBuilder::new()
            .link("l1", 1.0, 0.005)
            .source("s1", 1.0, 1.0)
            .route("r1", "s1", &["l1"])
            .build()
            .unwrap()
    }

    #[test]
    fn single_route_has_unit_routing_matrix() {
        let m = single();
        assert_eq!(m.routing_matrix(), DMatrix::from_element(1, 1, 1.0));
        assert_eq!(m.routes()[0].round_trip, 0.01);
        assert_eq!(m.routes()[0].hops[0].forward, 0.0);
        assert_eq!(m.routes()[0].hops[0].backward, 0.01);
    }

    #[test]
    fn disjoint_routes_give_identity() {
        let m = NetworkBuilder::new()
            .link("a", 1.0, 0.0)
            .link("b", 1.0, 0.0)
            .source("s", 1.0, 1.0)
            .route("ra", "s", &["a"])
            .route("rb", "s", &["b"])
            .build()
            .unwrap();
        assert_eq!(m.routing_matrix(), DMatrix::<f64>::identity(2, 2));
        assert_eq!(m.routing_rank(), 2);
    }

    #[test]
    fn hop_delays_accumulate_along_route() {
        let m = NetworkBuilder::new()
            .link("a", 1.0, 0.002)
            .link("b", 1.0, 0.003)
            .source("s", 1.0, 1.0)
            .route("r", "s", &["a", "b"])
            .build()
            .unwrap();
        let r = &m.routes()[0];
        assert!((r.round_trip - 0.01).abs() < 1e-15);
        assert_eq!(r.hops[0].forward, 0.0);
        assert!((r.hops[1].forward - 0.002).abs() < 1e-15);
        for h in &r.hops {
            assert!((h.forward + h.backward - r.round_trip).abs() <= HOP_DELAY_TOLERANCE);
        }
    }

    #[test]
    fn row_sums_count_traversing_routes() {
        let m = NetworkBuilder::new()
            .link("a", 1.0, 0.0)
            .link("b", 1.0, 0.0)
            .source("s", 1.0, 1.0)
            .source("t", 1.0, 1.0)
            .route("r1", "s", &["a", "b"])
            .route("r2", "s", &["b"])
            .route("r3", "t", &["b"])
            .build()
            .unwrap();
        let a = m.routing_matrix();
        for j in 0..m.num_links() {
            assert_eq!(a.row(j).sum() as usize, m.routes_on(j).len());
        }
        assert_eq!(m.routes_on(1), &[0, 1, 2]);
    }

    #[test]
    fn rejects_dangling_and_empty() {
        let err = NetworkBuilder::new()
            .link("a", 1.0, 0.0)
            .source("s", 1.0, 1.0)
            .route("r", "s", &["zz"])
            .build()
            .unwrap_err();
        assert_eq!(err, Error::UnknownLink("zz".into()));

        let err = NetworkBuilder::new()
            .link("a", 1.0, 0.0)
            .source("s", 1.0, 1.0)
            .route("r", "s", &[])
            .build()
            .unwrap_err();
        assert_eq!(err, Error::EmptyRoute("r".into()));

        let err = NetworkBuilder::new()
            .link("a", 1.0, 0.0)
            .source("s", 1.0, 1.0)
            .route("r", "nobody", &["a"])
            .build()
            .unwrap_err();
        assert_eq!(err, Error::UnknownSource("nobody".into()));
    }

    #[test]
    fn rejects_inconsistent_hop_delays() {
        let links = [LinkSpec {
            id: "a".into(),
            capacity: 1.0,
        }];
        let routes = [RouteSpec {
            id: "r".into(),
            source: "s".into(),
            hops: vec![HopSpec {
                link: "a".into(),
                forward: 0.001,
                backward: 0.002,
            }],
            round_trip: 0.004,
        }];
        let sources = [SourceSpec {
            id: "s".into(),
            routes: vec!["r".into()],
            weight: 1.0,
            alpha: 1.0,
        }];
        assert!(matches!(
            build_network(&links, &routes, &sources),
            Err(Error::HopDelayMismatch { .. })
        ));
    }

    #[test]
    fn rejects_double_ownership() {
        let links = [LinkSpec {
            id: "a".into(),
            capacity: 1.0,
        }];
        let routes = [RouteSpec {
            id: "r".into(),
            source: "s".into(),
            hops: vec![HopSpec {
                link: "a".into(),
                forward: 0.0,
                backward: 0.0,
            }],
            round_trip: 0.0,
        }];
        let sources = [
            SourceSpec {
                id: "s".into(),
                routes: vec!["r".into()],
                weight: 1.0,
                alpha: 1.0,
            },
            SourceSpec {
                id: "t".into(),
                routes: vec!["r".into()],
                weight: 1.0,
                alpha: 1.0,
            },
        ];
        assert!(matches!(
            build_network(&links, &routes, &sources),
            Err(Error::RouteOwnership { .. })
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = NetworkBuilder::new()
            .link("a", 1.0, 0.0)
            .link("a", 2.0, 0.0)
            .source("s", 1.0, 1.0)
            .route("r", "s", &["a"])
            .build()
            .unwrap_err();
        assert_eq!(err, Error::DuplicateId("a".into()));
    }

    #[test]
    fn max_source_rate_sums_bottlenecks() {
        let m = NetworkBuilder::new()
            .link("a", 3.0, 0.0)
            .link("b", 1.0, 0.0)
            .link("c", 2.0, 0.0)
            .source("s", 1.0, 1.0)
            .route("r1", "s", &["a", "b"])
            .route("r2", "s", &["c"])
            .build()
            .unwrap();
        assert_eq!(m.max_source_rate(0), 3.0);
    }
}
