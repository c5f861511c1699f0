//! Scratch driver for eyeballing cap behavior while tuning resolutions.
//! Run: cargo run --release -p metacap --example probe -- <case> <res_mm>

use metacap::continuation::{analyze_cap, trace_path, AnalyzeOptions, ShellSystem, TraceOptions};
use metacap::geometry::{build_metacap_mesh, cap_volume_closed_form, Material, MetacapGeometry};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let case = args.get(1).map(String::as_str).unwrap_or("metacap");
    let res_mm: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1.5);
    let raw = args.get(3).map(String::as_str) == Some("raw");

    let geom = match case {
        "thick" => MetacapGeometry::uniform(0.03, 0.15 * 0.03, 57.85f64.to_radians()),
        "thin" => MetacapGeometry::uniform(0.03, 0.075 * 0.03, 57.85f64.to_radians()),
        "metacap" => MetacapGeometry::reference(),
        other => panic!("unknown case {other}"),
    };
    if raw {
        raw_curve(&geom, res_mm);
        return;
    }
    let material = Material::elite_double_32();
    let t0 = std::time::Instant::now();
    let mesh = build_metacap_mesh(&geom, &material, res_mm * 1e-3).unwrap();
    println!(
        "case {case}: {} vertices, {} triangles (built in {:?})",
        mesh.vertices.len(),
        mesh.triangles.len(),
        t0.elapsed()
    );

    let opts = AnalyzeOptions::default();
    let t0 = std::time::Instant::now();
    match analyze_cap(&mesh, &opts) {
        Ok(analysis) => {
            println!("analysis in {:?}", t0.elapsed());
            println!("classification: {:?}", analysis.report.classification);
            println!("onset: {:?}", analysis.onset);
            println!(
                "e_r: {:?}  e_b: {:?}  everted_dv: {:?}",
                analysis.report.e_r, analysis.report.e_b, analysis.report.everted_dv
            );
            println!("limit points: {:?}", analysis.report.limit_points);
            println!(
                "inflation states: {}, deflation: {:?}",
                analysis.inflation.states.len(),
                analysis.deflation.as_ref().map(|d| d.states.len())
            );
            let mu = material.mu;
            let r3 = geom.r.powi(3);
            if let Some(d) = &analysis.deflation {
                println!("deflation curve (dv/R^3, p/mu):");
                let n = d.states.len();
                for (i, s) in d.states.iter().enumerate() {
                    if i % (n / 40 + 1) == 0 || i + 1 == n {
                        println!(
                            "  {:+.4}  {:+.6}  E={:.6e} stable={}",
                            s.dv / r3,
                            s.p / mu,
                            s.energy.total,
                            s.stable
                        );
                    }
                }
            } else {
                println!("inflation curve (dv/R^3, p/mu):");
                let n = analysis.inflation.states.len();
                for (i, s) in analysis.inflation.states.iter().enumerate() {
                    if i % (n / 30 + 1) == 0 || i + 1 == n {
                        println!(
                            "  {:+.4}  {:+.6}  E={:.6e} stable={}",
                            s.dv / r3,
                            s.p / mu,
                            s.energy.total,
                            s.stable
                        );
                    }
                }
            }
        }
        Err(e) => println!("analysis failed after {:?}: {e}", t0.elapsed()),
    }
}

fn raw_curve(geom: &MetacapGeometry<f64>, res_mm: f64) {
    let material = Material::elite_double_32();
    let mesh = build_metacap_mesh(geom, &material, res_mm * 1e-3).unwrap();
    println!("raw trace: {} vertices", mesh.vertices.len());
    let system = ShellSystem::new(&mesh).unwrap();
    let v_cap = cap_volume_closed_form(geom.r, geom.phi);
    let t0 = std::time::Instant::now();
    let path = trace_path(&system, None, (0.0, 2.6 * v_cap), &TraceOptions::default()).unwrap();
    println!(
        "traced {} states in {:?}, stalled: {:?}",
        path.states.len(),
        t0.elapsed(),
        path.metadata.stalled_at
    );
    let mu = material.mu;
    let r3 = geom.r.powi(3);
    let n = path.states.len();
    for (i, s) in path.states.iter().enumerate() {
        if i % (n / 60 + 1) == 0 || i + 1 == n {
            println!(
                "  {:+.4}  {:+.6}  E={:.6e} stable={}",
                s.dv / r3,
                s.p / mu,
                s.energy.total,
                s.stable
            );
        }
    }
}
