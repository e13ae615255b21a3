//! Small reference topologies used by the bundled scenarios, tests and benches.

use crate::network::{NetworkBuilder, NetworkModel};

/// One source, one route, one unit-capacity link. Round trip is twice
/// `one_way_delay`.
pub fn sl1(one_way_delay: f64) -> NetworkModel {
    NetworkBuilder::new()
        .link("l1", 1.0, one_way_delay)
        .source("s1", 1.0, 1.0)
        .route("r1", "s1", &["l1"])
        .build()
        .expect("static topology")
}

/// One source with two routes over disjoint unit-capacity links.
pub fn two_route(one_way_delay: f64) -> NetworkModel {
    NetworkBuilder::new()
        .link("l1", 1.0, one_way_delay)
        .link("l2", 1.0, one_way_delay)
        .source("s1", 1.0, 1.0)
        .route("r1", "s1", &["l1"])
        .route("r2", "s1", &["l2"])
        .build()
        .expect("static topology")
}

/// Source `s1` has a private unit link and shares a link of capacity 2 with
/// the single-route source `s2`.
pub fn asymmetric(one_way_delay: f64) -> NetworkModel {
    NetworkBuilder::new()
        .link("l1", 1.0, one_way_delay)
        .link("l2", 2.0, one_way_delay)
        .source("s1", 1.0, 1.0)
        .source("s2", 1.0, 1.0)
        .route("r1", "s1", &["l1"])
        .route("r2", "s1", &["l2"])
        .route("r3", "s2", &["l2"])
        .build()
        .expect("static topology")
}

/// Four-node topology with three source-destination pairs out of node 1
/// (1->2, 1->3, 1->4) and seven routes. Directed links: 1-2, 1-3, 2-3, 3-2,
/// 2-4, 3-4.
pub fn triangle(capacity: f64, one_way_delay: f64) -> NetworkModel {
    let d = one_way_delay;
    NetworkBuilder::new()
        .link("n1n2", capacity, d)
        .link("n1n3", capacity, d)
        .link("n2n3", capacity, d)
        .link("n3n2", capacity, d)
        .link("n2n4", capacity, d)
        .link("n3n4", capacity, d)
        .source("p12", 1.0, 1.0)
        .source("p13", 1.0, 1.0)
        .source("p14", 1.0, 1.0)
        .route("p12_direct", "p12", &["n1n2"])
        .route("p12_via3", "p12", &["n1n3", "n3n2"])
        .route("p13_direct", "p13", &["n1n3"])
        .route("p13_via2", "p13", &["n1n2", "n2n3"])
        .route("p14_via2", "p14", &["n1n2", "n2n4"])
        .route("p14_via3", "p14", &["n1n3", "n3n4"])
        .route("p14_via23", "p14", &["n1n2", "n2n3", "n3n4"])
        .build()
        .expect("static topology")
}

/// The fourteen Abilene backbone links (100 Mb/s, 2 ms) with two sources of
/// two routes each. The route set is a reconstruction: four routes whose
/// aggregate throughput is the quantity of interest.
pub fn abilene() -> NetworkModel {
    const LINKS: [&str; 14] = [
        "sea_snv", "sea_den", "snv_lax", "snv_den", "lax_hou", "den_kc", "kc_hou", "kc_ind",
        "hou_atl", "ind_chi", "ind_atl", "chi_nyc", "nyc_wdc", "wdc_atl",
    ];
    let mut b = NetworkBuilder::new();
    for l in LINKS {
        b.add_link(l, 100.0, 0.002);
    }
    b.add_source("sea_nyc", 1.0, 1.0);
    b.add_source("lax_chi", 1.0, 1.0);
    let route = |ls: &[&str]| ls.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    b.add_route(
        "sea_nyc_north",
        "sea_nyc",
        route(&["sea_den", "den_kc", "kc_ind", "ind_chi", "chi_nyc"]),
    );
    b.add_route(
        "sea_nyc_south",
        "sea_nyc",
        route(&["sea_snv", "snv_lax", "lax_hou", "hou_atl", "wdc_atl", "nyc_wdc"]),
    );
    b.add_route(
        "lax_chi_north",
        "lax_chi",
        route(&["snv_lax", "snv_den", "den_kc", "kc_ind", "ind_chi"]),
    );
    b.add_route(
        "lax_chi_south",
        "lax_chi",
        route(&["lax_hou", "hou_atl", "ind_atl", "ind_chi"]),
    );
    b.build().expect("static topology")
}
