//! Quaternion and rotation-matrix basics, the geodesic rotation loss and
//! projection of a 6-number network output onto SO(3).

use std::f64::consts::FRAC_PI_2;

use geodex::rotmath::{
    geodesic_angle, project_to_so3, random_rotation_so3, rotation_loss, RotMat, UnitQuaternion,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let q = UnitQuaternion::about_z(FRAC_PI_2);
    let r = q.to_matrix();
    println!("90 deg about z as rows: {:?}", r.as_array());
    println!("q and -q same orientation: {}", q.orientation_eq(&q.negated()));
    println!("angle to identity: {:.6} rad", geodesic_angle(&q, &UnitQuaternion::IDENTITY));

    // the matrix loss agrees with the quaternion angle
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..3 {
        let (a, b) = (random_rotation_so3(&mut rng), random_rotation_so3(&mut rng));
        let (loss, _) = rotation_loss(a.to_matrix().as_array(), &b.to_matrix());
        println!("loss {loss:.9}  angle {:.9}", geodesic_angle(&a, &b));
    }

    // Gram-Schmidt projection of two raw columns
    let raw = [1.0, 0.1, 0.0, 0.2, 2.0, 0.0];
    let p = project_to_so3(&raw)?;
    println!("projected det {:.12}, orthogonality residual {:.2e}", p.det(), p.orthogonality_residual());

    let rel = RotMat::relative(&RotMat::IDENTITY, &r);
    println!("relative rotation back to a quaternion: {:?}", rel.to_quat().to_array());
    Ok(())
}
