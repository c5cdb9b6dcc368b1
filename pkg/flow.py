"""
Compile flow for the cgrapipe compiler, built as a LangGraph StateGraph

parse -> passes -> place -> route -> postpnr -> schedule -> emit -> verify
Every stage returns a partial state update; a failed stage records its
error and the graph ends there.
"""
import logging
from typing import Callable, Optional

from langgraph.graph import END, StateGraph
from pydantic import BaseModel, ConfigDict, Field, InstanceOf

from cgrapipe.arch import ArchSpec, DelayLibrary, RoutingGraph, build_routing_graph, validate_arch
from cgrapipe.benchmarks import dense_stimulus, sparse_stimulus
from cgrapipe.bitstream import (
    Config,
    decode_config,
    duplicate_config,
    duplication_region,
    emit_config,
    routed_differences,
)
from cgrapipe.dfg import AppGraph, Mode, NodeKind, parse_app, validate_semantics
from cgrapipe.errors import (
    AppParseError,
    ArchError,
    CgraError,
    DelayLibraryError,
    UnroutableError,
    VerificationError,
)
from cgrapipe.passes import PASS_NAMES, run_passes
from cgrapipe.pnr import Placement, place
from cgrapipe.postpnr import (
    derive_schedules,
    insert_sparse_fifos,
    kernel_latency_deltas,
    post_pnr_pipeline,
    update_schedule,
)
from cgrapipe.route import RoutedApp, route
from cgrapipe.sim import Stimulus, TraceResult, equivalent_modulo_latency, simulate
from cgrapipe.sta import TimingReport, critical_path
from config import Settings

logger = logging.getLogger(__name__)

STAGES = ("parse", "passes", "place", "route", "postpnr", "schedule", "emit", "verify")


class FlowState(BaseModel):
    """Artifacts produced so far by one compile"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    # inputs
    spec: ArchSpec
    lib: DelayLibrary
    settings: Settings = Field(default_factory=Settings)
    selection: set[str] = Field(default_factory=lambda: set(PASS_NAMES))
    app_text: Optional[str] = None
    app: Optional[InstanceOf[AppGraph]] = None
    mode: Optional[Mode] = None
    stim: Optional[InstanceOf[Stimulus]] = None
    dup_factor: int = 1
    verify: bool = True

    # artifacts
    compile_spec: Optional[ArchSpec] = None
    baseline: Optional[InstanceOf[AppGraph]] = None
    graph: Optional[InstanceOf[AppGraph]] = None
    placement: Optional[InstanceOf[Placement]] = None
    routed: Optional[InstanceOf[RoutedApp]] = None
    timing: Optional[InstanceOf[TimingReport]] = None
    latency_deltas: dict[str, int] = Field(default_factory=dict)
    config: Optional[InstanceOf[Config]] = None
    trace: Optional[InstanceOf[TraceResult]] = None
    offset: Optional[int] = None
    warnings: list[str] = Field(default_factory=list)

    # outcome
    completed: list[str] = Field(default_factory=list)
    error: Optional[InstanceOf[Exception]] = None
    failed_stage: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


class CompileFlow:
    """
    Application compiler as a LangGraph workflow

    Architecture:
    - StateGraph with one node per stage, run in a fixed order
    - A conditional edge after each stage routes to END once a stage fails
    - Pass ablation through `selection`; `schedule` always runs
    """

    def __init__(self, rg: Optional[RoutingGraph] = None):
        self._rg = rg
        self.workflow = StateGraph(FlowState)
        self._setup_workflow()
        self.app = self.workflow.compile()

    def _setup_workflow(self):
        """Setup the StateGraph workflow"""
        handlers: dict[str, Callable[[FlowState], dict]] = {
            "parse": self.parse,
            "passes": self.passes,
            "place": self.place,
            "route": self.route,
            "postpnr": self.postpnr,
            "schedule": self.schedule,
            "emit": self.emit,
            "verify": self.verify_stage,
        }
        for name in STAGES:
            self.workflow.add_node(name, self._guard(name, handlers[name]))

        self.workflow.set_entry_point(STAGES[0])
        for stage, nxt in zip(STAGES, STAGES[1:]):
            self.workflow.add_conditional_edges(
                stage,
                self.check_error,
                {
                    "continue": nxt,
                    END: END,
                },
            )
        self.workflow.add_edge(STAGES[-1], END)

    def _guard(self, name: str, handler: Callable[[FlowState], dict]) -> Callable[[FlowState], dict]:
        def node(state: FlowState) -> dict:
            try:
                update = handler(state)
            except CgraError as e:
                logger.error("%s failed: %s", name, e)
                return {"error": e, "failed_stage": name}
            logger.info("stage %s done", name)
            return {**update, "completed": state.completed + [name]}

        return node

    def check_error(self, state: FlowState) -> str:
        """Conditional edge: stop at the first failed stage"""
        return END if state.error is not None else "continue"

    def run(self, state: FlowState) -> FlowState:
        """Run every stage and return the final state"""
        result = self.app.invoke(state)
        if isinstance(result, FlowState):
            return result
        return FlowState(**result)

    def rg(self, spec: ArchSpec) -> RoutingGraph:
        if self._rg is None or self._rg.spec != spec:
            self._rg = build_routing_graph(spec)
        return self._rg

    # ------------------------------------------------------------------
    # stages
    # ------------------------------------------------------------------

    def parse(self, state: FlowState) -> dict:
        """Node: validate inputs and fix the array the design is compiled for"""
        violations = validate_arch(state.spec)
        if violations:
            raise ArchError(violations)
        missing = state.lib.missing_classes(state.spec)
        if missing:
            raise DelayLibraryError(f"delay library misses {len(missing)} classes", missing=missing)

        if state.app is not None:
            g = state.app.copy()
        elif state.app_text is not None:
            g = parse_app(state.app_text, state.spec)
        else:
            raise AppParseError("no application given")
        if state.mode is not None:
            g.mode = state.mode
        for net in g.nets.values():
            if net.id in state.spec.hardened_nets and net.width == 1:
                net.hardened = True
        violations = validate_semantics(g, state.spec)
        if violations:
            raise AppParseError("; ".join(violations))

        spec = state.spec
        if state.dup_factor > 1:
            spec = spec.region(*duplication_region(spec, state.dup_factor))
            logger.info("compiling one instance on a %dx%d region", spec.rows, spec.cols)
        return {"baseline": g, "graph": g, "compile_spec": spec}

    def passes(self, state: FlowState) -> dict:
        """Node: pre-PnR pipelining passes"""
        g = run_passes(state.graph, state.compile_spec, state.settings.pass_params(), state.selection)
        return {"graph": g}

    def place(self, state: FlowState) -> dict:
        """Node: simulated annealing; without the placement pass every net weighs linearly"""
        alpha = None if "placement" in state.selection else 1.0
        placement = place(state.graph, state.compile_spec, state.settings.pnr_params(alpha=alpha))
        return {"placement": placement}

    def route(self, state: FlowState) -> dict:
        """Node: PathFinder routing"""
        spec = state.compile_spec
        r = route(state.graph, state.placement, spec, state.settings.pnr_params(), self.rg(spec))
        problems = r.check_legal(self.rg(spec))
        if problems:
            raise UnroutableError(sorted(r.graph.nets), reason=problems[0])
        return {"routed": r}

    def postpnr(self, state: FlowState) -> dict:
        """Node: critical-path breaking with SB registers (dense) or FIFOs (sparse)"""
        r, settings = state.routed, state.settings
        if "postpnr" in state.selection and settings.max_postpnr_iters > 0:
            if r.graph.mode == Mode.SPARSE:
                r = insert_sparse_fifos(r, state.lib, settings.max_postpnr_iters, settings.fifo_depth)
            else:
                r = post_pnr_pipeline(
                    r, state.lib, settings.max_postpnr_iters,
                    settings.pnr_params(), self.rg(state.compile_spec),
                )
        return {"routed": r, "graph": r.graph, "timing": critical_path(r, state.lib)}

    def schedule(self, state: FlowState) -> dict:
        """Node: two-round MEM schedules; round one ignores pipelining, round two shifts by it"""
        r = state.routed
        if r.graph.mode == Mode.SPARSE or not r.graph.nodes_of(NodeKind.MEM):
            return {}
        baseline = state.baseline.copy()
        mems = [m.id for m in baseline.nodes_of(NodeKind.MEM)]
        if any(m not in baseline.schedules for m in mems):
            derived = derive_schedules(baseline, state.settings.schedule_length)
            for m in mems:
                baseline.schedules.setdefault(m, derived.schedules[m])
        r = r.copy()
        for m in mems:
            r.graph.schedules.setdefault(m, list(baseline.schedules[m]))
        deltas = kernel_latency_deltas(baseline, r.graph, r)
        r.graph = update_schedule(r.graph, deltas)
        return {"routed": r, "graph": r.graph, "baseline": baseline, "latency_deltas": deltas}

    def emit(self, state: FlowState) -> dict:
        """Node: tile configuration, duplicated across the array when asked"""
        config = emit_config(state.routed)
        if state.dup_factor > 1:
            region = (state.compile_spec.rows, state.compile_spec.cols)
            config = duplicate_config(config, region, state.dup_factor, state.spec)
        return {"config": config}

    def verify_stage(self, state: FlowState) -> dict:
        """Node: simulate against the unpipelined application and check the config decodes back"""
        if not state.verify:
            return {}
        baseline, r = state.baseline, state.routed
        stim = state.stim or default_stimulus(baseline, state.settings)
        reference = simulate(baseline, stim)
        result = simulate(r, stim)
        warnings = list(result.warnings)

        if baseline.mode == Mode.SPARSE:
            if result.deadlock:
                raise VerificationError("pipelined design deadlocks")
            if result.outputs != reference.outputs:
                raise VerificationError("pipelined design changes the output token sequences")
            offset = 0
        else:
            same, offset = equivalent_modulo_latency(reference, result)
            if not same:
                raise VerificationError("pipelined design is not equivalent to the application")

        if state.dup_factor > 1:
            check_duplicates(state.config, state.spec, stim, result)
        else:
            diffs = routed_differences(r, decode_config(state.config, state.compile_spec))
            if diffs:
                raise VerificationError("config does not decode back to the design: " + diffs[0])
        logger.info("verified: output offset %s cycles", offset)
        return {"trace": result, "offset": offset, "warnings": state.warnings + warnings}


def default_stimulus(g: AppGraph, settings: Settings) -> Stimulus:
    if g.mode == Mode.SPARSE:
        return sparse_stimulus(g, length=16, seed=settings.seed)
    return dense_stimulus(g, length=min(settings.schedule_length, 32), seed=settings.seed)


def copy_stimulus(stim: Stimulus, suffix: str) -> Stimulus:
    return Stimulus({name + suffix: list(values) for name, values in stim.streams.items()})


def check_duplicates(config: Config, spec: ArchSpec, stim: Stimulus, single: TraceResult) -> None:
    """Every copy of a duplicated config must reproduce the single-instance outputs"""
    decoded = decode_config(config, spec)
    factor = len(config.symbols.get("regions", []))
    merged = Stimulus({})
    for k in range(factor):
        merged.streams.update(copy_stimulus(stim, "" if k == 0 else f"_d{k}").streams)
    result = simulate(decoded, merged)
    for k in range(factor):
        suffix = "" if k == 0 else f"_d{k}"
        for port, values in single.outputs.items():
            # the merged design runs longer, so only the single-instance horizon is compared
            if result.outputs.get(port + suffix, [])[:len(values)] != values:
                raise VerificationError(f"copy {k} of the duplicated config disagrees on {port}")


def compile_app(
    spec: ArchSpec,
    lib: DelayLibrary,
    app: AppGraph,
    settings: Optional[Settings] = None,
    selection: Optional[set[str]] = None,
    verify: bool = False,
    flow: Optional[CompileFlow] = None,
    **kwargs,
) -> FlowState:
    """Convenience wrapper: run the whole flow on an in-memory application"""
    flow = flow or CompileFlow()
    state = FlowState(
        spec=spec,
        lib=lib,
        app=app,
        settings=settings or Settings(),
        selection=set(PASS_NAMES) if selection is None else set(selection),
        verify=verify,
        **kwargs,
    )
    return flow.run(state)
