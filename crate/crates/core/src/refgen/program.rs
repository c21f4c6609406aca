use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::generate::FilledParams;
use super::layout::Layout;
use super::scene::GroundTruthSceneGraph;
use super::world::World;
use crate::error::{Error, Result};

/// Which end of a relation triple the result set ranges over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Subjects of triples whose object lies in the source set.
    Subject,
    /// Objects of triples whose subject lies in the source set.
    Object,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Step {
    Select {
        slot: usize,
        class: String,
        attributes: Vec<String>,
    },
    Relate {
        from: usize,
        to: usize,
        relation: String,
        direction: Direction,
    },
    Intersect {
        slot: usize,
    },
    UniqueCheck {
        slot: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionalProgram {
    pub steps: Vec<Step>,
}

impl FunctionalProgram {
    /// Slot checked by the final `UniqueCheck`.
    pub fn root(&self) -> Option<usize> {
        self.steps.iter().rev().find_map(|s| match s {
            Step::UniqueCheck { slot } => Some(*slot),
            _ => None,
        })
    }

    /// Steps restricted to `slots`, with intersections recomputed.
    fn restrict(&self, slots: &BTreeSet<usize>) -> FunctionalProgram {
        let mut relates: BTreeMap<usize, usize> = BTreeMap::new();
        for s in &self.steps {
            if let Step::Relate { from, to, .. } = s {
                if slots.contains(from) && slots.contains(to) {
                    *relates.entry(*to).or_default() += 1;
                }
            }
        }
        let mut steps = Vec::new();
        let mut last_relate: BTreeMap<usize, usize> = BTreeMap::new();
        for s in &self.steps {
            match s {
                Step::Select { slot, .. } if slots.contains(slot) => steps.push(s.clone()),
                Step::Relate { from, to, .. } if slots.contains(from) && slots.contains(to) => {
                    steps.push(s.clone());
                    let seen = last_relate.entry(*to).or_default();
                    *seen += 1;
                    if *seen == relates[to] && relates[to] > 1 {
                        steps.push(Step::Intersect { slot: *to });
                    }
                }
                Step::UniqueCheck { .. } => steps.push(s.clone()),
                _ => {}
            }
        }
        FunctionalProgram { steps }
    }

    fn layout(&self) -> Result<Layout> {
        let mut slots = BTreeSet::new();
        let mut edges = Vec::new();
        for s in &self.steps {
            match s {
                Step::Select { slot, .. } => {
                    slots.insert(*slot);
                }
                Step::Relate { from, to, .. } => edges.push((*to, *from)),
                _ => {}
            }
        }
        if slots.iter().enumerate().any(|(i, &s)| i != s) {
            return Err(Error::Validation(
                "program slots are not numbered 0..n".into(),
            ));
        }
        Layout::new(slots.len(), edges)
    }
}

/// Select per slot, Relate per edge, Intersect where a slot has several
/// modifiers, and a final UniqueCheck, with slots in topological order.
pub fn compile_program(layout: &Layout, params: &FilledParams) -> Result<FunctionalProgram> {
    let root = layout.root()?;
    if params.slots.len() != layout.n || params.relations.len() != layout.edges.len() {
        return Err(Error::Usage(format!(
            "parameters cover {} slots and {} relations, layout has {} and {}",
            params.slots.len(),
            params.relations.len(),
            layout.n,
            layout.edges.len()
        )));
    }
    let mut steps = Vec::new();
    for slot in layout.topological_order() {
        let fill = &params.slots[slot];
        steps.push(Step::Select {
            slot,
            class: fill.class.clone(),
            attributes: fill.attributes.clone(),
        });
        for (e, &(s, o)) in layout.edges.iter().enumerate() {
            if s == slot {
                steps.push(Step::Relate {
                    from: o,
                    to: s,
                    relation: params.relations[e].clone(),
                    direction: Direction::Subject,
                });
            }
        }
        if layout.in_degree(slot) > 1 {
            steps.push(Step::Intersect { slot });
        }
    }
    steps.push(Step::UniqueCheck { slot: root });
    Ok(FunctionalProgram { steps })
}

/// Runs the program and returns the object ids left in the checked slot.
pub fn execute_program(
    program: &FunctionalProgram,
    scene: &GroundTruthSceneGraph,
    world: &World,
) -> Result<BTreeSet<u32>> {
    let relation_classes = world.relation_classes();
    let mut incoming: BTreeMap<usize, usize> = BTreeMap::new();
    for s in &program.steps {
        if let Step::Relate { to, .. } = s {
            *incoming.entry(*to).or_default() += 1;
        }
    }
    let mut sets: BTreeMap<usize, BTreeSet<u32>> = BTreeMap::new();
    let mut pending: BTreeMap<usize, Vec<BTreeSet<u32>>> = BTreeMap::new();
    for step in &program.steps {
        match step {
            Step::Select {
                slot,
                class,
                attributes,
            } => {
                if !world.classes.contains(class) {
                    return Err(Error::Validation(format!("unknown class {class:?}")));
                }
                if let Some(a) = attributes.iter().find(|a| !world.is_attribute(a)) {
                    return Err(Error::Validation(format!("unknown attribute {a:?}")));
                }
                let found = scene
                    .objects
                    .iter()
                    .filter(|o| {
                        &o.class == class && attributes.iter().all(|a| o.attributes.contains(a))
                    })
                    .map(|o| o.id)
                    .collect();
                sets.insert(*slot, found);
            }
            Step::Relate {
                from,
                to,
                relation,
                direction,
            } => {
                if !relation_classes.contains(relation) {
                    return Err(Error::Validation(format!("unknown relation {relation:?}")));
                }
                let src = sets.get(from).ok_or_else(|| {
                    Error::Validation(format!("slot {from} related before it is selected"))
                })?;
                let related: BTreeSet<u32> = scene
                    .relations
                    .iter()
                    .filter(|r| &r.relation == relation)
                    .filter_map(|r| match direction {
                        Direction::Subject => src.contains(&r.object).then_some(r.subject),
                        Direction::Object => src.contains(&r.subject).then_some(r.object),
                    })
                    .collect();
                if incoming.get(to) == Some(&1) {
                    let dst = sets.get_mut(to).ok_or_else(|| {
                        Error::Validation(format!("slot {to} related before it is selected"))
                    })?;
                    dst.retain(|id| related.contains(id));
                } else {
                    pending.entry(*to).or_default().push(related);
                }
            }
            Step::Intersect { slot } => {
                let dst = sets.get_mut(slot).ok_or_else(|| {
                    Error::Validation(format!("slot {slot} intersected before it is selected"))
                })?;
                for r in pending.remove(slot).unwrap_or_default() {
                    dst.retain(|id| r.contains(id));
                }
            }
            Step::UniqueCheck { slot } => {
                if pending.values().any(|v| !v.is_empty()) {
                    return Err(Error::Validation(
                        "relation results left unintersected".into(),
                    ));
                }
                return sets.remove(slot).ok_or_else(|| {
                    Error::Validation(format!("unique check on unselected slot {slot}"))
                });
            }
        }
    }
    Err(Error::Validation("program has no unique check".into()))
}

/// True iff the program picks out exactly the referent.
pub fn accept(
    program: &FunctionalProgram,
    scene: &GroundTruthSceneGraph,
    referent: u32,
    world: &World,
) -> bool {
    matches!(execute_program(program, scene, world), Ok(s) if s.len() == 1 && s.contains(&referent))
}

/// Fewest slots of a connected sub-program containing the root that still
/// picks out exactly the referent.
pub fn difficulty(
    program: &FunctionalProgram,
    scene: &GroundTruthSceneGraph,
    referent: u32,
    world: &World,
) -> Result<usize> {
    let layout = program.layout()?;
    let root = layout.root()?;
    let mut subsets: Vec<BTreeSet<usize>> = (0u32..1 << layout.n)
        .map(|mask| {
            (0..layout.n)
                .filter(|s| mask >> s & 1 == 1)
                .collect::<BTreeSet<usize>>()
        })
        .filter(|s| s.contains(&root) && connected_to_root(&layout, s, root))
        .collect();
    subsets.sort_by_key(|s| s.len());
    for s in subsets {
        if accept(&program.restrict(&s), scene, referent, world) {
            return Ok(s.len());
        }
    }
    Err(Error::Validation(format!(
        "program does not single out object {referent}"
    )))
}

fn connected_to_root(layout: &Layout, slots: &BTreeSet<usize>, root: usize) -> bool {
    let mut reach = BTreeSet::from([root]);
    let mut frontier = vec![root];
    while let Some(s) = frontier.pop() {
        for &(subj, obj) in &layout.edges {
            if subj == s && slots.contains(&obj) && reach.insert(obj) {
                frontier.push(obj);
            }
        }
    }
    reach.len() == slots.len()
}
