use serde_json::{json, Value};

use super::{ExecutedCell, OutcomeStatus};

/// nbformat splits multi-line strings into lines that keep their `\n`.
fn split_lines(text: &str) -> Vec<String> {
    text.split_inclusive('\n').map(str::to_string).collect()
}

fn cell_id(i: usize) -> String {
    format!("cell-{:03}", i + 1)
}

fn outputs(cell: &ExecutedCell) -> Vec<Value> {
    let o = &cell.outcome;
    let mut out = Vec::new();
    for (name, text) in [("stdout", &o.stdout), ("stderr", &o.stderr)] {
        if !text.is_empty() {
            out.push(json!({"output_type": "stream", "name": name, "text": split_lines(text)}));
        }
    }
    match (&o.status, &o.exception) {
        (_, Some(e)) => out.push(json!({
            "output_type": "error",
            "ename": e.name,
            "evalue": e.message,
            "traceback": e.traceback,
        })),
        (OutcomeStatus::Timeout, None) => out.push(json!({
            "output_type": "error",
            "ename": "TimeoutError",
            "evalue": "cell exceeded its time limit",
            "traceback": [],
        })),
        _ => {}
    }
    out
}

/// A notebook document (nbformat 4.5) with one code cell per executed cell,
/// outputs embedded. Contains no timestamps, so identical cells give
/// identical documents.
pub fn notebook_json(cells: &[&ExecutedCell], kernel_name: &str) -> Value {
    let cells: Vec<Value> = cells
        .iter()
        .enumerate()
        .map(|(i, c)| {
            json!({
                "cell_type": "code",
                "execution_count": i + 1,
                "id": cell_id(i),
                "metadata": {},
                "outputs": outputs(c),
                "source": split_lines(&c.code),
            })
        })
        .collect();
    json!({
        "cells": cells,
        "metadata": {
            "kernelspec": {"display_name": kernel_name, "language": "python", "name": kernel_name},
            "language_info": {"name": "python"},
        },
        "nbformat": 4,
        "nbformat_minor": 5,
    })
}
