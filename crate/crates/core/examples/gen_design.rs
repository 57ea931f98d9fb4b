//! Regenerates `data/design_1296.txt`.
//!
//! cargo run --release -p ambiforge --example gen_design -- <degree> > data/design_1296.txt

use ambiforge::design::refine_mirror_design;

fn main() {
    let degree: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("degree"))
        .unwrap_or(ambiforge::design::DESIGN_1296_DEGREE);
    let (grid, residual) = refine_mirror_design(648, degree, 200).expect("design");
    eprintln!("degree {degree}: residual {residual:.3e}");
    println!("# 1296-point equal-weight spherical design, exact to degree {degree}");
    println!("# theta_deg phi_deg");
    let unweighted = ambiforge::sh::DirectionGrid::new(grid.directions().to_vec()).expect("grid");
    print!("{}", unweighted.to_text());
}
