use crate::keys::KeyPositionSet;
use crate::scene::Scene;

/// Move key positions outside the drivable area onto the nearest lanelet centerline.
pub fn calibrate_key_positions(keys: &KeyPositionSet, scene: &Scene) -> KeyPositionSet {
    let area = scene.drivable_area();
    let mut out = keys.clone();
    for agent in &mut out.agents {
        for p in agent.modes.iter_mut().flatten() {
            if !area.contains(*p) {
                if let Some((_, proj)) = scene.nearest_lanelet(*p) {
                    *p = proj.point;
                }
            }
        }
    }
    out
}
