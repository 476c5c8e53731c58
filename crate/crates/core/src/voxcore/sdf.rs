//! SDF (simulation description format) export of a generated object.

use std::fmt::Write as _;

use super::{GeometryError, InertiaResult, TriMesh};

/// An SDF model document plus the OBJ sidecar it references.
#[derive(Clone, Debug, PartialEq)]
pub struct SdfExport {
    pub sdf: String,
    pub obj: String,
    pub obj_file_name: String,
}

pub fn export_sdf(
    mesh: &TriMesh,
    inertia: &InertiaResult,
    name: &str,
) -> Result<SdfExport, GeometryError> {
    if mesh.is_empty() {
        return Err(GeometryError::InvalidArgument("cannot export an empty mesh".into()));
    }
    let valid_name = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if !valid_name {
        return Err(GeometryError::InvalidArgument(format!(
            "model name {name:?} must be a non-empty identifier"
        )));
    }

    let obj_file_name = format!("{name}.obj");
    let [cx, cy, cz] = inertia.center_of_mass;
    let t = &inertia.inertia;
    let geometry = format!(
        "        <geometry>\n          <mesh>\n            <uri>{obj_file_name}</uri>\n          </mesh>\n        </geometry>\n"
    );

    let mut sdf = String::new();
    let _ = write!(
        sdf,
        "<?xml version=\"1.0\"?>\n\
         <sdf version=\"1.6\">\n\
         \x20 <model name=\"{name}\">\n\
         \x20   <link name=\"body\">\n\
         \x20     <inertial>\n\
         \x20       <pose>{cx} {cy} {cz} 0 0 0</pose>\n\
         \x20       <mass>{}</mass>\n\
         \x20       <inertia>\n\
         \x20         <ixx>{}</ixx>\n\
         \x20         <ixy>{}</ixy>\n\
         \x20         <ixz>{}</ixz>\n\
         \x20         <iyy>{}</iyy>\n\
         \x20         <iyz>{}</iyz>\n\
         \x20         <izz>{}</izz>\n\
         \x20       </inertia>\n\
         \x20     </inertial>\n\
         \x20     <collision name=\"collision\">\n{geometry}\
         \x20     </collision>\n\
         \x20     <visual name=\"visual\">\n{geometry}\
         \x20     </visual>\n\
         \x20   </link>\n\
         \x20 </model>\n\
         </sdf>\n",
        inertia.mass, t[0][0], t[0][1], t[0][2], t[1][1], t[1][2], t[2][2],
    );

    Ok(SdfExport {
        sdf,
        obj: mesh.to_obj(),
        obj_file_name,
    })
}
