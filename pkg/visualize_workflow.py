#!/usr/bin/env python3
"""
Generate a Mermaid diagram of the compile flow
"""
from flow import STAGES

STAGE_LABELS = {
    "parse": "📄 Parse arch + app",
    "passes": "🔧 Pre-PnR passes",
    "place": "📍 Place (SA)",
    "route": "🧵 Route (PathFinder)",
    "postpnr": "⏱ Post-PnR pipelining",
    "schedule": "🗓 MEM schedules",
    "emit": "💾 Emit config",
    "verify": "✅ Verify",
}


def flow_diagram(stages: tuple[str, ...] = STAGES) -> str:
    """Mermaid flowchart: each stage continues on success and ends on error"""
    lines = ["graph TD"]
    for stage in stages:
        lines.append(f"    {stage}[{STAGE_LABELS.get(stage, stage)}]")
    for stage, nxt in zip(stages, stages[1:]):
        lines.append(f"    {stage} -->|ok| {nxt}")
        lines.append(f"    {stage} -.->|error| done")
    lines.append(f"    {stages[-1]} --> done")
    lines.append("    done((END))")
    return "\n".join(lines)


def generate_mermaid_diagram() -> str:
    """Generate and display the workflow diagram"""
    diagram = f"""
# Compile Flow Diagram

```mermaid
{flow_diagram()}
```

## Dense vs sparse

```mermaid
graph LR
    A[routed design] --> B{{mode}}
    B -->|dense| C[SB registers + branch balancing]
    B -->|sparse| D[FIFO insertion]
    C --> E[schedule update]
    D --> F[no schedules]
```

## Pass ablation

```mermaid
graph LR
    U[unpipelined] --> C[+compute] --> B[+broadcast] --> S[+chains] --> P[+placement] --> Q[+post-PnR]
```
"""

    print(diagram)

    # Also save to file
    with open("WORKFLOW.md", "w", encoding="utf-8") as f:
        f.write(diagram)

    print("\n✓ Workflow diagrams saved to WORKFLOW.md")
    print("  View on GitHub or in a Mermaid-compatible viewer")
    return diagram


if __name__ == "__main__":
    generate_mermaid_diagram()
