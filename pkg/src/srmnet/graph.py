"""Layer graph and analytic cost accounting.

``count_flops`` resolves the node list the network executes for a given
input size and reports multiply-accumulates, parameter counts, and a
2x-MACs figure including non-MAC work.

Counting conventions (pinned so golden counts are reproducible):
  - conv k x k:        macs = B * C_out * C_in * k^2 * H_out * W_out;
                       a bias adds B * C_out * H_out * W_out non-MAC ops
  - activation:        1 op per element
  - elementwise add:   1 op per element
  - global avg pool:   1 op per input element
  - branch softmax:    1 op per element across the stacked branch logits
  - branch pre-sum:    (L - 1) ops per element
  - weighted fuse:     (2L - 1) ops per element (L muls + L-1 adds)
  - bilinear resize:   8 ops per output element
  - pixel (un)shuffle, concat: free (pure permutation / relabeling)
  - flops_2x = 2 * macs + non-MAC ops
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import UnresolvedShape

Shape4 = tuple[int, int, int, int]


@dataclass
class GraphNode:
    name: str
    kind: str
    output_shape: Shape4
    macs: int = 0
    extra_ops: int = 0
    params: int = 0


@dataclass
class FlopsReport:
    input_shape: Shape4
    nodes: list[GraphNode] = field(default_factory=list)

    @property
    def macs(self) -> int:
        return sum(n.macs for n in self.nodes)

    @property
    def extra_ops(self) -> int:
        return sum(n.extra_ops for n in self.nodes)

    @property
    def flops_2x(self) -> int:
        return 2 * self.macs + self.extra_ops

    @property
    def params(self) -> int:
        return sum(n.params for n in self.nodes)

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "macs": self.macs,
            "flops_2x": self.flops_2x,
            "extra_ops": self.extra_ops,
            "params": self.params,
            "nodes": [
                {
                    "name": n.name,
                    "kind": n.kind,
                    "output_shape": list(n.output_shape),
                    "macs": n.macs,
                    "extra_ops": n.extra_ops,
                    "params": n.params,
                }
                for n in self.nodes
            ],
        }

    def to_text(self) -> str:
        width = max(len(n.name) for n in self.nodes) if self.nodes else 4
        lines = [f"{'node':<{width}}  {'kind':<14} {'output':<20} {'macs':>14} {'extra':>12} {'params':>10}"]
        for n in self.nodes:
            shape = "x".join(str(s) for s in n.output_shape)
            lines.append(f"{n.name:<{width}}  {n.kind:<14} {shape:<20} {n.macs:>14} {n.extra_ops:>12} {n.params:>10}")
        lines.append("-" * len(lines[0]))
        lines.append(f"total macs     = {self.macs}  ({self.macs / 1e9:.3f} G)")
        lines.append(f"total flops_2x = {self.flops_2x}  ({self.flops_2x / 1e9:.3f} G)")
        lines.append(f"total params   = {self.params}")
        return "\n".join(lines)


def count_flops(model, input_shape: Shape4) -> FlopsReport:
    """Resolve the layer graph of ``model`` on ``input_shape`` and total its cost."""
    if len(input_shape) != 4 or any(int(s) <= 0 for s in input_shape):
        raise UnresolvedShape(f"input shape must be four positive extents, got {input_shape}")
    report = FlopsReport(input_shape=tuple(int(s) for s in input_shape))
    model.profile(report.input_shape, report.nodes)
    return report
