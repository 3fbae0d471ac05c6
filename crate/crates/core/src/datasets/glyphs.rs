//! Stroke skeletons of the 26 capital letters in unit coordinates
//! (x to the right, y downwards, glyph roughly inside [0.15, 0.85]^2).

pub type Point = (f64, f64);
pub type Stroke = Vec<Point>;

fn line(pts: &[Point]) -> Stroke {
    pts.to_vec()
}

/// Elliptical arc from `a0` to `a1` degrees (0 = right, 90 = down).
fn arc(cx: f64, cy: f64, rx: f64, ry: f64, a0: f64, a1: f64) -> Stroke {
    let n = ((a1 - a0).abs() / 15.0).ceil().max(2.0) as usize;
    (0..=n)
        .map(|i| {
            let a = (a0 + (a1 - a0) * i as f64 / n as f64).to_radians();
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

fn join(mut a: Stroke, b: Stroke) -> Stroke {
    a.extend(b);
    a
}

fn p_bowl() -> Vec<Stroke> {
    vec![
        line(&[(0.25, 0.85), (0.25, 0.15)]),
        join(
            join(line(&[(0.25, 0.15), (0.55, 0.15)]), arc(0.55, 0.33, 0.2, 0.18, -90.0, 90.0)),
            line(&[(0.55, 0.51), (0.25, 0.51)]),
        ),
    ]
}

/// Skeleton of class `c` (0 = 'A').
pub fn skeleton(c: u8) -> Vec<Stroke> {
    match c {
        0 => vec![line(&[(0.2, 0.85), (0.5, 0.15), (0.8, 0.85)]), line(&[(0.33, 0.58), (0.67, 0.58)])],
        1 => vec![
            line(&[(0.25, 0.15), (0.25, 0.85)]),
            join(
                join(line(&[(0.25, 0.15), (0.55, 0.15)]), arc(0.55, 0.325, 0.17, 0.175, -90.0, 90.0)),
                line(&[(0.55, 0.5), (0.25, 0.5)]),
            ),
            join(
                join(line(&[(0.25, 0.5), (0.58, 0.5)]), arc(0.58, 0.675, 0.2, 0.175, -90.0, 90.0)),
                line(&[(0.58, 0.85), (0.25, 0.85)]),
            ),
        ],
        2 => vec![arc(0.52, 0.5, 0.3, 0.35, -45.0, -315.0)],
        3 => vec![
            line(&[(0.25, 0.15), (0.25, 0.85)]),
            join(
                join(line(&[(0.25, 0.15), (0.42, 0.15)]), arc(0.42, 0.5, 0.33, 0.35, -90.0, 90.0)),
                line(&[(0.42, 0.85), (0.25, 0.85)]),
            ),
        ],
        4 => vec![line(&[(0.72, 0.15), (0.25, 0.15), (0.25, 0.85), (0.72, 0.85)]), line(&[(0.25, 0.5), (0.62, 0.5)])],
        5 => vec![line(&[(0.72, 0.15), (0.25, 0.15), (0.25, 0.85)]), line(&[(0.25, 0.5), (0.62, 0.5)])],
        6 => vec![
            join(arc(0.52, 0.5, 0.3, 0.35, -45.0, -360.0), line(&[(0.82, 0.5), (0.82, 0.8)])),
            line(&[(0.82, 0.5), (0.56, 0.5)]),
        ],
        7 => vec![
            line(&[(0.25, 0.15), (0.25, 0.85)]),
            line(&[(0.75, 0.15), (0.75, 0.85)]),
            line(&[(0.25, 0.5), (0.75, 0.5)]),
        ],
        8 => vec![
            line(&[(0.5, 0.15), (0.5, 0.85)]),
            line(&[(0.35, 0.15), (0.65, 0.15)]),
            line(&[(0.35, 0.85), (0.65, 0.85)]),
        ],
        9 => vec![join(line(&[(0.7, 0.15), (0.7, 0.65)]), arc(0.5, 0.65, 0.2, 0.2, 0.0, 180.0))],
        10 => vec![
            line(&[(0.25, 0.15), (0.25, 0.85)]),
            line(&[(0.75, 0.15), (0.25, 0.58)]),
            line(&[(0.4, 0.46), (0.75, 0.85)]),
        ],
        11 => vec![line(&[(0.25, 0.15), (0.25, 0.85), (0.72, 0.85)])],
        12 => vec![line(&[(0.2, 0.85), (0.2, 0.15), (0.5, 0.6), (0.8, 0.15), (0.8, 0.85)])],
        13 => vec![line(&[(0.25, 0.85), (0.25, 0.15), (0.75, 0.85), (0.75, 0.15)])],
        14 => vec![arc(0.5, 0.5, 0.3, 0.35, 0.0, 360.0)],
        15 => p_bowl(),
        16 => vec![arc(0.5, 0.5, 0.3, 0.35, 0.0, 360.0), line(&[(0.55, 0.65), (0.8, 0.9)])],
        17 => {
            let mut s = p_bowl();
            s.push(line(&[(0.45, 0.51), (0.75, 0.85)]));
            s
        }
        18 => vec![join(arc(0.5, 0.32, 0.22, 0.17, -30.0, -270.0), arc(0.5, 0.67, 0.24, 0.18, -90.0, 150.0))],
        19 => vec![line(&[(0.2, 0.15), (0.8, 0.15)]), line(&[(0.5, 0.15), (0.5, 0.85)])],
        20 => vec![join(
            join(line(&[(0.25, 0.15), (0.25, 0.6)]), arc(0.5, 0.6, 0.25, 0.25, 180.0, 0.0)),
            line(&[(0.75, 0.6), (0.75, 0.15)]),
        )],
        21 => vec![line(&[(0.2, 0.15), (0.5, 0.85), (0.8, 0.15)])],
        22 => vec![line(&[(0.15, 0.15), (0.32, 0.85), (0.5, 0.4), (0.68, 0.85), (0.85, 0.15)])],
        23 => vec![line(&[(0.22, 0.15), (0.78, 0.85)]), line(&[(0.78, 0.15), (0.22, 0.85)])],
        24 => vec![line(&[(0.2, 0.15), (0.5, 0.5), (0.8, 0.15)]), line(&[(0.5, 0.5), (0.5, 0.85)])],
        25 => vec![line(&[(0.22, 0.15), (0.78, 0.15), (0.22, 0.85), (0.78, 0.85)])],
        _ => panic!("class {c} out of range"),
    }
}
