"""Per-invocation latency breakdown.

An offloaded invocation is split into lettered phases. The directly
measured compute windows are:

* wrapper side: A (invocation setup), G (state-callback handling, summed),
  M (response cross-check and teardown);
* proxy side: B (context init + session open), D (chaincode work before its
  first state command), E (up-call encode/forward, summed), H (up-call
  response post-processing, summed), J (chaincode work after the last state
  response), K (building the invocation response), L (session close +
  context finalize).

The remaining letters are derived round-trip residuals: C (request
transit), I (up-call round trips minus the wrapper's G), N (response
transit) and O (everything inside the proxy span not otherwise named:
world switches, copies, trusted-thread queueing). Their definitions make
the letters sum exactly to the wrapper-observed wall time plus A and M.
Phase F is unused.
"""

from dataclasses import dataclass, field, fields

PHASE_LETTERS = ("A", "B", "C", "D", "E", "G", "H", "I", "J", "K", "L", "M", "N", "O")


@dataclass
class PhaseTimings:
    a_us: float = 0.0
    b_us: float = 0.0
    c_us: float = 0.0
    d_us: float = 0.0
    e_us: float = 0.0
    g_us: float = 0.0
    h_us: float = 0.0
    i_us: float = 0.0
    j_us: float = 0.0
    k_us: float = 0.0
    l_us: float = 0.0
    m_us: float = 0.0
    n_us: float = 0.0
    o_us: float = 0.0

    def total_us(self) -> float:
        return sum(getattr(self, f.name) for f in fields(self))

    def as_dict(self) -> dict[str, float]:
        return {letter: getattr(self, f"{letter.lower()}_us") for letter in PHASE_LETTERS}

    @classmethod
    def from_dict(cls, values: dict[str, float]) -> "PhaseTimings":
        return cls(**{f"{k.lower()}_us": float(v) for k, v in values.items()})


def mean_phases(samples: list[PhaseTimings]) -> PhaseTimings:
    if not samples:
        return PhaseTimings()
    out = PhaseTimings()
    for f in fields(PhaseTimings):
        setattr(out, f.name, sum(getattr(s, f.name) for s in samples) / len(samples))
    return out


@dataclass
class WrapperPhases:
    """Wrapper-side measurements for one invocation."""

    a_us: float = 0.0
    g_us: float = 0.0
    m_us: float = 0.0
    j_local_us: float = 0.0  # baseline only: in-process chaincode execution
    t_send_req_ns: int = 0
    t_recv_resp_ns: int = 0


@dataclass
class ProxyPhases:
    """Proxy-side measurements for one invocation."""

    b_us: float = 0.0
    d_us: float = 0.0
    e_us: float = 0.0
    h_us: float = 0.0
    j_us: float = 0.0
    k_us: float = 0.0
    l_us: float = 0.0
    upcall_wait_us: float = 0.0
    t_recv_req_ns: int = 0
    t_send_resp_ns: int = 0
    upcalls: int = 0
    cost_trace: list[tuple[int, int]] = field(default_factory=list)


def join_phases(wrapper: WrapperPhases, proxy: ProxyPhases | None) -> PhaseTimings:
    """Combine both sides into the full lettered breakdown.

    Desk-scale deployments share one monotonic clock, so the transit
    phases C and N come straight from cross-side timestamps. Residuals
    are clamped at zero against scheduler jitter.
    """
    pt = PhaseTimings(a_us=wrapper.a_us, g_us=wrapper.g_us, m_us=wrapper.m_us)
    if proxy is None:
        pt.j_us = max(0.0, wrapper.j_local_us - wrapper.g_us)
        return pt
    pt.b_us = proxy.b_us
    pt.d_us = proxy.d_us
    pt.e_us = proxy.e_us
    pt.h_us = proxy.h_us
    pt.j_us = proxy.j_us
    pt.k_us = proxy.k_us
    pt.l_us = proxy.l_us
    pt.c_us = max(0.0, (proxy.t_recv_req_ns - wrapper.t_send_req_ns) / 1000)
    pt.n_us = max(0.0, (wrapper.t_recv_resp_ns - proxy.t_send_resp_ns) / 1000)
    pt.i_us = max(0.0, proxy.upcall_wait_us - wrapper.g_us)
    proxy_span_us = (proxy.t_send_resp_ns - proxy.t_recv_req_ns) / 1000
    named = (proxy.b_us + proxy.d_us + proxy.e_us + proxy.upcall_wait_us
             + proxy.h_us + proxy.j_us + proxy.k_us + proxy.l_us)
    pt.o_us = max(0.0, proxy_span_us - named)
    return pt
