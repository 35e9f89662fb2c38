//! Line-delimited trace format.
//!
//! Fields are separated by a single tab. The first line is the init record,
//! every later line is one firing:
//!
//! ```text
//! init  <N>  <state of node 1>  ...  <state of node N>
//! step  <step>  <node>  <rule name>  <staleness>  <new state of node>
//! ```
//!
//! `<staleness>` lists `neighbour:steps-stale` pairs separated by commas,
//! in the order the program declares its neighbours, or `-` when the node
//! reads nobody. States use the program's own rendering, which never
//! contains tabs or newlines.

use std::io::{BufRead, Write};

use super::{EngineError, GlobalState, NodeId, NodeProgram};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry<S> {
    /// Scheduled activation index (1-based) at which the node fired.
    pub step: u64,
    pub node: NodeId,
    pub rule: usize,
    pub staleness: Vec<(NodeId, u32)>,
    pub state: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace<S> {
    pub init: GlobalState<S>,
    pub entries: Vec<TraceEntry<S>>,
}

impl<S: Clone> Trace<S> {
    /// Applies every entry to the init state.
    pub fn replay(&self) -> GlobalState<S> {
        let mut state = self.init.clone();
        for e in &self.entries {
            state.set(e.node, e.state.clone());
        }
        state
    }

    /// Calls `f` on the init state and on the state after every entry.
    pub fn for_each_state(&self, mut f: impl FnMut(&GlobalState<S>)) {
        let mut state = self.init.clone();
        f(&state);
        for e in &self.entries {
            state.set(e.node, e.state.clone());
            f(&state);
        }
    }
}

pub fn trace_export<P: NodeProgram, W: Write + ?Sized>(
    program: &P,
    trace: &Trace<P::State>,
    out: &mut W,
) -> std::io::Result<()> {
    write!(out, "init\t{}", trace.init.len())?;
    for (_, s) in trace.init.iter() {
        write!(out, "\t{}", program.render_state(s))?;
    }
    writeln!(out)?;
    let names = program.rule_names();
    for e in &trace.entries {
        let staleness = if e.staleness.is_empty() {
            "-".to_string()
        } else {
            e.staleness
                .iter()
                .map(|(j, s)| format!("{j}:{s}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        writeln!(
            out,
            "step\t{}\t{}\t{}\t{}\t{}",
            e.step,
            e.node,
            names[e.rule],
            staleness,
            program.render_state(&e.state)
        )?;
    }
    Ok(())
}

pub fn parse_trace<P: NodeProgram, R: BufRead>(
    program: &P,
    input: R,
) -> Result<Trace<P::State>, EngineError> {
    let err = |line: usize, reason: String| EngineError::TraceParse { line, reason };
    let mut lines = input.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| err(1, "empty trace".into()))?;
    let first = first?;
    let mut fields = first.split('\t');
    if fields.next() != Some("init") {
        return Err(err(1, "first record must be the init record".into()));
    }
    let count: usize = fields
        .next()
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| err(1, "missing node count".into()))?;
    let locals = fields
        .map(|f| program.parse_state(f))
        .collect::<Result<Vec<_>, _>>()?;
    if locals.len() != count || count != program.node_count() {
        return Err(err(
            1,
            format!(
                "init record has {} states, header says {count}, program has {}",
                locals.len(),
                program.node_count()
            ),
        ));
    }

    let names = program.rule_names();
    let mut entries = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 || f[0] != "step" {
            return Err(err(lineno, "expected a six-field step record".into()));
        }
        let step = f[1].parse().map_err(|_| err(lineno, "bad step".into()))?;
        let node: NodeId = f[2].parse().map_err(|_| err(lineno, "bad node id".into()))?;
        if node == 0 || node > count {
            return Err(err(lineno, format!("node {node} out of range")));
        }
        let rule = names
            .iter()
            .position(|n| *n == f[3])
            .ok_or_else(|| err(lineno, format!("unknown rule {:?}", f[3])))?;
        let staleness = if f[4] == "-" {
            Vec::new()
        } else {
            f[4].split(',')
                .map(|pair| {
                    let (j, s) = pair.split_once(':')?;
                    Some((j.parse().ok()?, s.parse().ok()?))
                })
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| err(lineno, "bad staleness list".into()))?
        };
        let state = program.parse_state(f[5])?;
        entries.push(TraceEntry {
            step,
            node,
            rule,
            staleness,
            state,
        });
    }
    Ok(Trace {
        init: GlobalState::new(locals),
        entries,
    })
}
