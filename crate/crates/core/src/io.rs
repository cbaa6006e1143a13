//! Plain-text persistence of sampled configurations and chain diagnostics.
//!
//! Configuration files start with `#kind point|segment|plate`, then one
//! `#config <i>` line per configuration followed by one particle per line:
//!
//! * point: `x,y` or `x,y,z`
//! * segment: `cx,cy,length,orientation`
//! * plate: `cx,cy,cz,radius,nx,ny,nz`
//!
//! Blank lines are ignored. Floats are written in shortest round-trip form.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{hemisphere_representative, norm3, Plate3D, Segment2D};
use crate::mcmc::StepRecord;
use crate::process::{Configuration, Particle, ParticleKind};

pub fn parse_kind(s: &str) -> Option<ParticleKind> {
    match s {
        "point" => Some(ParticleKind::Point),
        "segment" => Some(ParticleKind::Segment),
        "plate" => Some(ParticleKind::Plate),
        _ => None,
    }
}

fn particle_line(p: &Particle) -> String {
    match p {
        Particle::Point(z) => format!("{},{},{}", z[0], z[1], z[2]),
        Particle::Segment(s) => format!("{},{},{},{}", s.center[0], s.center[1], s.length, s.orientation),
        Particle::Plate(q) => format!("{},{},{},{},{},{},{}", q.center[0], q.center[1], q.center[2], q.radius, q.normal[0], q.normal[1], q.normal[2]),
    }
}

pub fn write_configurations(kind: ParticleKind, configs: &[Configuration]) -> String {
    let mut out = format!("#kind {}\n", kind.as_str());
    for (i, c) in configs.iter().enumerate() {
        let _ = writeln!(out, "#config {i}");
        for p in c.iter() {
            out.push_str(&particle_line(p));
            out.push('\n');
        }
    }
    out
}

pub fn read_configurations(text: &str) -> Result<(ParticleKind, Vec<Configuration>)> {
    let mut kind = None;
    let mut configs: Vec<Vec<Particle>> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line: line_no, msg };
        if let Some(rest) = line.strip_prefix("#kind") {
            if kind.is_some() {
                return Err(err("duplicate #kind header".into()));
            }
            kind = Some(parse_kind(rest.trim()).ok_or_else(|| err(format!("unknown particle kind '{}'", rest.trim())))?);
            continue;
        }
        let k = kind.ok_or_else(|| err("missing #kind header".into()))?;
        if let Some(rest) = line.strip_prefix("#config") {
            let idx: usize = rest.trim().parse().map_err(|_| err(format!("bad configuration index '{}'", rest.trim())))?;
            if idx != configs.len() {
                return Err(err(format!("expected configuration {}, found {idx}", configs.len())));
            }
            configs.push(Vec::new());
            continue;
        }
        if line.starts_with('#') {
            return Err(err(format!("unknown directive '{line}'")));
        }
        let current = configs.last_mut().ok_or_else(|| err("particle before the first #config line".into()))?;
        let v: Vec<f64> = line.split(',').map(|t| t.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|e| err(format!("bad number: {e}")))?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(err("non-finite value".into()));
        }
        let p = match (k, v.len()) {
            (ParticleKind::Point, 2) => Particle::Point([v[0], v[1], 0.0]),
            (ParticleKind::Point, 3) => Particle::Point([v[0], v[1], v[2]]),
            (ParticleKind::Segment, 4) => Particle::Segment(Segment2D::new([v[0], v[1]], v[2], v[3])),
            (ParticleKind::Plate, 7) => {
                let stored = Plate3D { center: [v[0], v[1], v[2]], radius: v[3], normal: [v[4], v[5], v[6]] };
                // keep an already normalized normal bit-for-bit
                if stored.normal == hemisphere_representative(stored.normal) && (norm3(stored.normal) - 1.0).abs() <= 1e-12 {
                    Particle::Plate(stored)
                } else {
                    Particle::Plate(Plate3D::new(stored.center, stored.radius, stored.normal))
                }
            }
            (k, n) => return Err(err(format!("{n} fields do not describe a {}", k.as_str()))),
        };
        current.push(p);
    }
    let kind = kind.ok_or(Error::Parse { line: 0, msg: "empty input".into() })?;
    Ok((kind, configs.into_iter().map(Configuration::new).collect()))
}

/// `step,count,proposal,accepted` rows.
pub fn write_chain_diagnostics(trace: &[StepRecord]) -> String {
    let mut out = String::from("step,count,proposal,accepted\n");
    for r in trace {
        let _ = writeln!(out, "{},{},{},{}", r.step, r.count, r.proposal.as_str(), r.accepted as u8);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::Proposal;
    use proptest::prelude::*;

    fn particle(kind: u8) -> impl Strategy<Value = Particle> {
        let f = -10.0f64..10.0;
        match kind {
            0 => (f.clone(), f.clone(), f).prop_map(|(x, y, z)| Particle::Point([x, y, z])).boxed(),
            1 => (f.clone(), f, 0.001f64..1.0, 0.0f64..3.0).prop_map(|(x, y, l, a)| Particle::Segment(Segment2D::new([x, y], l, a))).boxed(),
            _ => (f.clone(), f.clone(), f, 0.001f64..1.0, -1.0f64..1.0, -1.0f64..1.0, 0.1f64..1.0)
                .prop_map(|(x, y, z, r, a, b, c)| Particle::Plate(Plate3D::new([x, y, z], r, [a, b, c])))
                .boxed(),
        }
    }

    proptest! {
        #[test]
        fn round_trip((kind, configs) in (0u8..3).prop_flat_map(|k| (Just(k), prop::collection::vec(prop::collection::vec(particle(k), 0..6), 0..5)))) {
            let configs: Vec<Configuration> = configs.into_iter().map(Configuration::new).collect();
            let k = [ParticleKind::Point, ParticleKind::Segment, ParticleKind::Plate][kind as usize];
            let text = write_configurations(k, &configs);
            let (k2, back) = read_configurations(&text).unwrap();
            prop_assert_eq!(k2, k);
            prop_assert_eq!(back, configs);
        }
    }

    #[test]
    fn two_field_points() {
        let (k, c) = read_configurations("#kind point\n#config 0\n0.5,0.25\n\n#config 1\n").unwrap();
        assert_eq!(k, ParticleKind::Point);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].particles, vec![Particle::Point([0.5, 0.25, 0.0])]);
        assert!(c[1].is_empty());
    }

    #[test]
    fn parse_errors_name_the_line() {
        let e = read_configurations("#kind segment\n#config 0\n1,2,3\n").unwrap_err();
        assert_eq!(e, Error::Parse { line: 3, msg: "3 fields do not describe a segment".into() });
        assert!(matches!(read_configurations("#config 0\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(read_configurations("#kind disk\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(read_configurations("#kind point\n#config 1\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(read_configurations("#kind point\n#config 0\n1,x\n"), Err(Error::Parse { line: 3, .. })));
        assert!(read_configurations("").is_err());
    }

    #[test]
    fn diagnostics_csv() {
        let t = [StepRecord { step: 5, count: 3, proposal: Proposal::Death, accepted: true }];
        assert_eq!(write_chain_diagnostics(&t), "step,count,proposal,accepted\n5,3,death,1\n");
    }
}
