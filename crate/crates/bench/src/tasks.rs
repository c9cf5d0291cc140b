//! Goal programs with known answers, generated from a scene's ground truth.

use serde::{Deserialize, Serialize};

use crate::scene::{ObjectRole, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskFamily {
    /// A duplicated object, disambiguated by the region it stands in.
    AreaObject,
    /// A duplicated sound, disambiguated by the object next to it.
    ObjectSound,
    /// A duplicated object, disambiguated by a photo taken near it.
    VisualObject,
}

impl TaskFamily {
    pub const ALL: [TaskFamily; 3] = [TaskFamily::AreaObject, TaskFamily::ObjectSound, TaskFamily::VisualObject];

    pub fn name(&self) -> &'static str {
        match self {
            TaskFamily::AreaObject => "area-object",
            TaskFamily::ObjectSound => "object-sound",
            TaskFamily::VisualObject => "visual-object",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }
}

/// Whether a task's program fuses both cues or uses the primary cue alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fused,
    Single,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Fused => "fused",
            Method::Single => "single",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub family: TaskFamily,
    pub description: String,
    pub fused: String,
    pub single: String,
    /// Ground-truth goal.
    pub target: [f64; 3],
}

impl Task {
    pub fn program(&self, m: Method) -> &str {
        match m {
            Method::Fused => &self.fused,
            Method::Single => &self.single,
        }
    }
}

fn lit(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// One task per duplicated object, sound event or query photo, in scene order.
pub fn tasks(scene: &Scene, family: TaskFamily) -> Vec<Task> {
    match family {
        TaskFamily::AreaObject => scene
            .objects
            .iter()
            .filter(|o| o.role == ObjectRole::Ring)
            .map(|o| {
                let area = &scene.regions[o.region].label;
                Task {
                    family,
                    description: format!("{} in the {}", o.label, area),
                    fused: format!(
                        "obj = get_major_map(obj={})\narea = get_map(area={})\nmove_to(max_pos(obj * area))\n",
                        lit(&o.label),
                        lit(area)
                    ),
                    single: format!("move_to(max_pos(get_major_map(obj={})))\n", lit(&o.label)),
                    target: o.center,
                }
            })
            .collect(),
        TaskFamily::ObjectSound => scene
            .sounds
            .iter()
            .map(|e| {
                let near = &scene.objects[e.neighbor].label;
                Task {
                    family,
                    description: format!("{} near the {}", e.label, near),
                    fused: format!(
                        "sound = get_major_map(sound={})\nnear = get_map(obj={})\nmove_to(max_pos(sound * near))\n",
                        lit(&e.label),
                        lit(near)
                    ),
                    single: format!("move_to(max_pos(get_major_map(sound={})))\n", lit(&e.label)),
                    target: e.position,
                }
            })
            .collect(),
        TaskFamily::VisualObject => scene
            .queries
            .iter()
            .map(|q| {
                let o = &scene.objects[q.target];
                Task {
                    family,
                    description: format!("{} seen in {}", o.label, q.name),
                    fused: format!(
                        "photo = load_image({})\nobj = get_major_map(obj={})\nview = get_map(img=photo)\nmove_to(max_pos(obj * view))\n",
                        lit(&q.name),
                        lit(&o.label)
                    ),
                    single: format!("move_to(max_pos(get_major_map(obj={})))\n", lit(&o.label)),
                    target: o.center,
                }
            })
            .collect(),
    }
}
