"""Particle cloth solver (XPBD) and the shrink-stitch-inflate drape protocol.

A pattern mesh is placed around a skeleton-shrunk mannequin, draped to rest,
its seams pulled together with zero-rest-length constraints, the body
inflated back to full volume, posed, and settled. Constraint projection is
Jacobi-accumulated (order-free, so symmetric setups stay symmetric) with
per-particle count averaging, compiled with numba.

Material mapping: each normalized stiffness s in [0,1] becomes an XPBD
compliance alpha = 10**(-2 - 4*s) m/N (log-spaced over [1e-2, 1e-6]; s=1 is
stiffest). Stretch applies to triangle edges; cross-pair constraints over
adjacent triangles are split by pattern-space direction into bend
(within 22.5 deg of the warp/weft axes) and shear (diagonal) sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .mannequin import ARM_ANGLE, Capsule, Mannequin, PoseSpec, build_mannequin, shrink_to_skeleton, waist_anchor_y
from .patterns import GarmentParams, GarmentType, PatternMesh


class SolverDiverged(Exception):
    """A particle exceeded the documented speed or position bounds."""


AREA_DENSITY = 0.18  # kg/m^2, light woven fabric
STITCH_COMPLIANCE = 1e-8

# Cloth resists stretch far more than shear, and shear far more than bend;
# each normalized scalar maps log-spaced over the same base range and the
# mode scale sets the physical hierarchy (plate-stiff bending would violate
# the no-stretch drape bound).
SHEAR_COMPLIANCE_SCALE = 1e2
BEND_COMPLIANCE_SCALE = 1e4


def material_compliance(s: float, scale: float = 1.0) -> float:
    return scale * 10.0 ** (-2.0 - 4.0 * float(s))


@dataclass(eq=False)
class DrapeConfig:
    dt: float = 1.0 / 60.0
    substeps: int = 8
    iterations: int = 1
    gravity: tuple[float, float, float] = (0.0, -9.81, 0.0)
    collision_margin: float = 0.004
    settle_threshold: float = 0.03  # max particle speed, m/s
    max_steps: int = 4200  # total substep budget across all phases
    damping: float = 0.02  # velocity fraction removed per substep
    friction: float = 0.55
    contact_cling: float = 6e-5  # absolute per-substep stick allowance, meters
    shrink_factor: float = 0.25
    stitch_substeps: int = 50
    inflate_substeps: int = 200
    pose_substeps: int = 150
    drape_substeps: int = 1400  # budget for the initial drape-to-rest
    settle_substeps: int = 1400  # budget for the final settle
    placement_jitter: float = 1e-4  # seeded symmetry-breaking noise, meters
    floor_y: float | None = 0.0  # ground plane; None disables it
    speed_limit: float = 80.0
    position_limit: float = 10.0

    def __post_init__(self):
        if self.dt <= 0 or self.settle_threshold <= 0 or self.collision_margin < 0:
            raise ValueError("dt and thresholds must be positive")


@dataclass(eq=False)
class ClothState:
    """Particles plus constraint sets; compliances derive from the material."""

    positions: np.ndarray  # (n,3)
    velocities: np.ndarray  # (n,3)
    inv_mass: np.ndarray  # (n,)
    edges: np.ndarray  # (e,2) stretch constraints
    edge_rest: np.ndarray
    edge_compliance: np.ndarray
    cross_pairs: np.ndarray  # (c,2) bend/shear constraints
    cross_rest: np.ndarray
    cross_compliance: np.ndarray
    stitch_pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    def __post_init__(self):
        if np.any(self.edge_rest <= 0) or np.any(self.cross_rest < 0):
            raise ValueError("rest lengths must be positive")
        if np.any(self.inv_mass < 0):
            raise ValueError("inv_mass must be nonnegative")
        n = len(self.positions)
        for idx in (self.edges, self.cross_pairs, self.stitch_pairs):
            if len(idx) and (idx.min() < 0 or idx.max() >= n):
                raise ValueError("constraint indices out of range")


@dataclass(eq=False)
class DrapedMeshRaw:
    """Drape result on the pattern's own topology; final_body is the
    target-pose mannequin the result rests on."""

    positions: np.ndarray  # (n,3)
    pattern: PatternMesh
    gtype: GarmentType | None
    settled: bool
    seed: int = 0
    final_body: Mannequin | None = None


# --------------------------------------------------------------------------
# compiled core

@njit(cache=True)
def _substeps_kernel(
    pos, vel, inv_mass,
    edges, edge_rest, edge_alpha,
    cross, cross_rest, cross_alpha,
    stitch, stitch_rest, stitch_alpha,
    cap_a, cap_b, cap_r,
    gravity, dt, n_sub, iterations, damping, margin, friction, cling, floor_y,
    settle_threshold, speed_limit, pos_limit,
):
    """Run n_sub XPBD substeps in place. Returns (status, substeps_run):
    status 0 = settled, 1 = budget exhausted, 2 = diverged."""
    n = pos.shape[0]
    delta = np.zeros((n, 3))
    count = np.zeros(n)
    n_caps = cap_a.shape[0]
    dt2 = dt * dt
    for step in range(n_sub):
        prev = pos.copy()
        for i in range(n):
            if inv_mass[i] > 0.0:
                vel[i, 0] = (vel[i, 0] + gravity[0] * dt) * (1.0 - damping)
                vel[i, 1] = (vel[i, 1] + gravity[1] * dt) * (1.0 - damping)
                vel[i, 2] = (vel[i, 2] + gravity[2] * dt) * (1.0 - damping)
                pos[i, 0] += vel[i, 0] * dt
                pos[i, 1] += vel[i, 1] * dt
                pos[i, 2] += vel[i, 2] * dt
        for _ in range(iterations):
            for group in range(3):
                if group == 0:
                    idx, rest, alpha = edges, edge_rest, edge_alpha
                elif group == 1:
                    idx, rest, alpha = cross, cross_rest, cross_alpha
                else:
                    idx, rest, alpha = stitch, stitch_rest, stitch_alpha
                m = idx.shape[0]
                if m == 0:
                    continue
                delta[:, :] = 0.0
                count[:] = 0.0
                for k in range(m):
                    a, b = idx[k, 0], idx[k, 1]
                    wa, wb = inv_mass[a], inv_mass[b]
                    wsum = wa + wb
                    if wsum == 0.0:
                        continue
                    dx = pos[a, 0] - pos[b, 0]
                    dy = pos[a, 1] - pos[b, 1]
                    dz = pos[a, 2] - pos[b, 2]
                    dist = np.sqrt(dx * dx + dy * dy + dz * dz)
                    if dist < 1e-12:
                        continue
                    c = dist - rest[k]
                    dl = -c / (wsum + alpha[k] / dt2)
                    ux, uy, uz = dx / dist, dy / dist, dz / dist
                    delta[a, 0] += wa * dl * ux
                    delta[a, 1] += wa * dl * uy
                    delta[a, 2] += wa * dl * uz
                    delta[b, 0] -= wb * dl * ux
                    delta[b, 1] -= wb * dl * uy
                    delta[b, 2] -= wb * dl * uz
                    count[a] += 1.0
                    count[b] += 1.0
                for i in range(n):
                    if count[i] > 0.0:
                        pos[i, 0] += delta[i, 0] / count[i]
                        pos[i, 1] += delta[i, 1] / count[i]
                        pos[i, 2] += delta[i, 2] / count[i]
        # body collision: project onto the capsule-union surface + margin
        if n_caps > 0:
            for i in range(n):
                if inv_mass[i] == 0.0:
                    continue
                best = 1e30
                gx = 0.0
                gy = 1.0
                gz = 0.0
                for k in range(n_caps):
                    abx = cap_b[k, 0] - cap_a[k, 0]
                    aby = cap_b[k, 1] - cap_a[k, 1]
                    abz = cap_b[k, 2] - cap_a[k, 2]
                    apx = pos[i, 0] - cap_a[k, 0]
                    apy = pos[i, 1] - cap_a[k, 1]
                    apz = pos[i, 2] - cap_a[k, 2]
                    denom = abx * abx + aby * aby + abz * abz
                    t = 0.0
                    if denom > 1e-18:
                        t = (apx * abx + apy * aby + apz * abz) / denom
                        if t < 0.0:
                            t = 0.0
                        elif t > 1.0:
                            t = 1.0
                    cx = cap_a[k, 0] + t * abx
                    cy = cap_a[k, 1] + t * aby
                    cz = cap_a[k, 2] + t * abz
                    dx = pos[i, 0] - cx
                    dy = pos[i, 1] - cy
                    dz = pos[i, 2] - cz
                    dist = np.sqrt(dx * dx + dy * dy + dz * dz)
                    sd = dist - cap_r[k]
                    if sd < best:
                        best = sd
                        if dist > 1e-12:
                            gx, gy, gz = dx / dist, dy / dist, dz / dist
                        else:
                            gx, gy, gz = 0.0, 1.0, 0.0
                if best < margin:
                    push = margin - best
                    pos[i, 0] += push * gx
                    pos[i, 1] += push * gy
                    pos[i, 2] += push * gz
                    # Coulomb friction on the tangential motion this substep:
                    # stick below mu*push, otherwise shed mu*push worth
                    mx = pos[i, 0] - prev[i, 0]
                    my = pos[i, 1] - prev[i, 1]
                    mz = pos[i, 2] - prev[i, 2]
                    mn = mx * gx + my * gy + mz * gz
                    tx = mx - mn * gx
                    ty = my - mn * gy
                    tz = mz - mn * gz
                    tl = np.sqrt(tx * tx + ty * ty + tz * tz)
                    if tl > 1e-15:
                        hold = friction * push + cling
                        scale = 1.0 if tl <= hold else hold / tl
                        pos[i, 0] -= scale * tx
                        pos[i, 1] -= scale * ty
                        pos[i, 2] -= scale * tz
        if floor_y > -1e29:
            for i in range(n):
                if inv_mass[i] == 0.0:
                    continue
                lift = floor_y + margin - pos[i, 1]
                if lift > 0.0:
                    pos[i, 1] += lift
                    mx = pos[i, 0] - prev[i, 0]
                    mz = pos[i, 2] - prev[i, 2]
                    tl = np.sqrt(mx * mx + mz * mz)
                    if tl > 1e-15:
                        hold = friction * lift + cling
                        scale = 1.0 if tl <= hold else hold / tl
                        pos[i, 0] -= scale * mx
                        pos[i, 2] -= scale * mz
        vmax2 = 0.0
        pmax = 0.0
        for i in range(n):
            vel[i, 0] = (pos[i, 0] - prev[i, 0]) / dt
            vel[i, 1] = (pos[i, 1] - prev[i, 1]) / dt
            vel[i, 2] = (pos[i, 2] - prev[i, 2]) / dt
            v2 = vel[i, 0] ** 2 + vel[i, 1] ** 2 + vel[i, 2] ** 2
            if v2 > vmax2:
                vmax2 = v2
            for d in range(3):
                a = abs(pos[i, d])
                if a > pmax:
                    pmax = a
        if vmax2 > speed_limit * speed_limit or pmax > pos_limit or np.isnan(vmax2):
            return 2, step + 1
        if vmax2 < settle_threshold * settle_threshold:
            return 0, step + 1
    return 1, n_sub


_NO_CAPS = (np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))
_NO_PAIRS = (np.zeros((0, 2), dtype=np.int64), np.zeros(0), np.zeros(0))


def run_substeps(
    state: ClothState,
    cfg: DrapeConfig,
    n_sub: int,
    capsules: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
    stitch_rest: np.ndarray | None = None,
    stop_on_settle: bool = True,
) -> bool:
    """Advance the state; returns True if the settle threshold was reached.
    Raises SolverDiverged on runaway particles."""
    cap_a, cap_b, cap_r = capsules if capsules is not None else _NO_CAPS
    if len(state.stitch_pairs):
        srt = stitch_rest if stitch_rest is not None else np.zeros(len(state.stitch_pairs))
        stitch = (
            np.ascontiguousarray(state.stitch_pairs),
            np.ascontiguousarray(srt),
            np.full(len(state.stitch_pairs), STITCH_COMPLIANCE),
        )
    else:
        stitch = _NO_PAIRS
    status, _ = _substeps_kernel(
        state.positions, state.velocities, state.inv_mass,
        np.ascontiguousarray(state.edges), state.edge_rest, state.edge_compliance,
        np.ascontiguousarray(state.cross_pairs), state.cross_rest, state.cross_compliance,
        *stitch,
        np.ascontiguousarray(cap_a), np.ascontiguousarray(cap_b), np.ascontiguousarray(cap_r),
        np.asarray(cfg.gravity, dtype=np.float64),
        cfg.dt / cfg.substeps, n_sub, cfg.iterations, cfg.damping,
        cfg.collision_margin, cfg.friction, cfg.contact_cling,
        cfg.floor_y if cfg.floor_y is not None else -1e30,
        cfg.settle_threshold if stop_on_settle else 0.0,
        cfg.speed_limit, cfg.position_limit,
    )
    if status == 2:
        raise SolverDiverged("particle exceeded speed or position bounds")
    return status == 0


# --------------------------------------------------------------------------
# cloth construction and placement

def _unique_edges(tris: np.ndarray) -> np.ndarray:
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def _cross_pairs(tris: np.ndarray) -> np.ndarray:
    """Opposite-vertex pairs of triangles sharing an edge."""
    owners: dict[tuple[int, int], list[int]] = {}
    for t in tris:
        for k in range(3):
            a, b = int(t[k]), int(t[(k + 1) % 3])
            key = (min(a, b), max(a, b))
            owners.setdefault(key, []).append(int(t[(k + 2) % 3]))
    pairs = [tuple(v) for v in owners.values() if len(v) == 2]
    return np.asarray(pairs, dtype=np.int64) if pairs else np.zeros((0, 2), dtype=np.int64)


def build_cloth_state(pattern: PatternMesh, g: GarmentParams) -> ClothState:
    """Rest-state cloth from a pattern mesh: constraints from 2D geometry,
    positions left in the flat layout (call a placement before simulating)."""
    v2 = pattern.vertices_2d
    tris = pattern.triangles
    edges = _unique_edges(tris)
    # seams join different panels: no in-plane rest shape across them
    edge_rest = np.linalg.norm(v2[edges[:, 0]] - v2[edges[:, 1]], axis=1)
    cross = _cross_pairs(tris)
    alpha_stretch = material_compliance(g.material[0])
    alpha_bend = material_compliance(g.material[1], BEND_COMPLIANCE_SCALE)
    alpha_shear = material_compliance(g.material[2], SHEAR_COMPLIANCE_SCALE)
    edge_alpha = np.full(len(edges), alpha_stretch)
    if len(cross):
        cross_rest = np.linalg.norm(v2[cross[:, 0]] - v2[cross[:, 1]], axis=1)
        d = np.abs(v2[cross[:, 0]] - v2[cross[:, 1]])
        ang = np.arctan2(d[:, 1], np.maximum(d[:, 0], 1e-18))
        off_axis = np.minimum(ang, np.pi / 2 - ang)
        cross_alpha = np.where(off_axis <= np.deg2rad(22.5), alpha_bend, alpha_shear)
    else:
        cross_rest = np.zeros(0)
        cross_alpha = np.zeros(0)

    # lumped mass: a third of each incident triangle's area
    p0, p1, p2 = (v2[tris[:, k]] for k in range(3))
    e1, e2 = p1 - p0, p2 - p0
    area = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]) / 2
    mass = np.zeros(len(v2))
    for k in range(3):
        np.add.at(mass, tris[:, k], area * AREA_DENSITY / 3)
    mass = np.maximum(mass, 1e-8)

    positions = np.concatenate([v2, np.zeros((len(v2), 1))], axis=1)
    return ClothState(
        positions=positions,
        velocities=np.zeros_like(positions),
        inv_mass=1.0 / mass,
        edges=edges,
        edge_rest=edge_rest,
        edge_compliance=edge_alpha,
        cross_pairs=cross,
        cross_rest=cross_rest,
        cross_compliance=cross_alpha,
        stitch_pairs=np.ascontiguousarray(pattern.seam_vertex_pairs, dtype=np.int64),
    )


def _place_panels(
    state: ClothState, pattern: PatternMesh, gtype: GarmentType, body: Mannequin, rng: np.random.Generator,
    jitter: float,
) -> None:
    m = body.measurements
    shoulders_y, hip_y = m["shoulders_y"], m["hip_y"]
    torso = shoulders_y - hip_y
    v2 = pattern.vertices_2d
    pos = state.positions
    names = pattern.panel_names
    phys = body.body.physical()

    def body_offset(panel_idx: int) -> float:
        return 1.0 if names[panel_idx] == "front" else -1.0

    if gtype == GarmentType.SKIRT:
        # wrap each panel around the body as a half-cone: per row, pattern x
        # maps isometrically onto a half-circle whose radius follows the
        # panel width, so the waist ring and the hanging cloth agree
        anchor_y = waist_anchor_y(phys)
        z_off = 0.25 * phys["hip_radius"] + 0.045
        for pi, name in enumerate(names):
            sel = pattern.source_panel == pi
            top = v2[sel][:, 1].max()
            pos[sel, 0] = v2[sel, 0]
            pos[sel, 1] = v2[sel, 1] + (anchor_y - top)
            pos[sel, 2] = body_offset(pi) * z_off
        # wrap the waistband ring onto a circle (isometric in arc length) so
        # the pinned verts conform to the body instead of jutting out
        pins = pattern.pinned_vertices
        if len(pins):
            widths = []
            for pi in range(len(names)):
                px = v2[pins[pattern.source_panel[pins] == pi], 0]
                widths.append(px.max() - px.min() if len(px) else 0.0)
            r_ring = max(sum(widths), 1e-6) / (2 * np.pi)
            for pi in range(len(names)):
                sel_pins = pins[pattern.source_panel[pins] == pi]
                theta = v2[sel_pins, 0] / r_ring
                pos[sel_pins, 0] = r_ring * np.sin(theta)
                pos[sel_pins, 2] = body_offset(pi) * r_ring * np.cos(theta)
    elif gtype in (GarmentType.SHIRT, GarmentType.KIMONO):
        z_off = 0.25 * phys["chest_radius"] + 0.045
        for pi, name in enumerate(names):
            sel = pattern.source_panel == pi
            if name in ("front", "back"):
                top = v2[sel][:, 1].max()
                pos[sel, 0] = v2[sel, 0]
                pos[sel, 1] = v2[sel, 1] + (shoulders_y + 0.015 - top)
                pos[sel, 2] = body_offset(pi) * z_off
            else:  # shirt sleeve panels, framed along the arm
                s = -1.0 if name.endswith("_l") else 1.0
                theta = body.arm_angle
                joint = np.array([s * m["shoulder_width"] / 2, shoulders_y - 0.02, 0.0])
                arm_dir = np.array([s * np.sin(theta), -np.cos(theta), 0.0])
                side_dir = np.array([s * np.cos(theta), np.sin(theta), 0.0])
                length = v2[sel][:, 1].max()
                z_s = 0.25 * phys["arm_radius"] + 0.035
                local = v2[sel]
                world = (
                    joint[None]
                    + (length - local[:, 1])[:, None] * arm_dir[None]
                    + local[:, 0][:, None] * side_dir[None]
                    + np.array([0.0, 0.0, z_s])[None]
                )
                pos[sel] = world
    pos += rng.normal(0.0, jitter, size=pos.shape) if jitter > 0 else 0.0


def _dressing_proxy(m: Mannequin) -> Mannequin:
    """Collision body for the dressing phases: both legs merged into one
    central capsule so slack cloth cannot fall between them and get pinched
    when the body inflates."""
    phys = m.body.physical()
    legs = [c for c in m.capsules if c.name.startswith("leg")]
    if not legs:
        return m
    keep = tuple(c for c in m.capsules if not c.name.startswith("leg"))
    span = 0.35 * phys["hip_radius"] + phys["leg_radius"]
    top = max(c.a[1] for c in legs)
    merged = Capsule("legs_merged", np.array([0.0, top, 0.0]), np.array([0.0, 0.04, 0.0]), span)
    return Mannequin(keep + (merged,), m.pose, m.arm_angle, dict(m.measurements), m.body)


def drape(
    pattern: PatternMesh,
    g: GarmentParams,
    body: Mannequin,
    cfg: DrapeConfig | None = None,
    seed: int = 0,
    gtype: GarmentType | None = None,
) -> DrapedMeshRaw:
    """Full drape protocol; deterministic per seed.

    Waistband/shoulder pin vertices are fixed during the shrunk-body drape
    and the stitch ramp only, then released for inflation, posing, settling.
    """
    cfg = cfg or DrapeConfig()
    if gtype is None:
        gtype = _guess_gtype(pattern)
    rng = np.random.default_rng(seed)
    state = build_cloth_state(pattern, g)
    _place_panels(state, pattern, gtype, body, rng, cfg.placement_jitter)

    dressing_body = _dressing_proxy(body) if gtype == GarmentType.SKIRT else body
    shrunk = shrink_to_skeleton(dressing_body, cfg.shrink_factor)
    inv_mass_full = state.inv_mass.copy()
    if len(pattern.pinned_vertices):
        state.inv_mass[pattern.pinned_vertices] = 0.0

    budget = cfg.max_steps

    def spend(n):
        nonlocal budget
        n = min(n, budget)
        budget -= n
        return n

    # 1) drape over the shrunken body, seams slack
    stitch0 = np.linalg.norm(
        state.positions[state.stitch_pairs[:, 0]] - state.positions[state.stitch_pairs[:, 1]], axis=1
    ) if len(state.stitch_pairs) else np.zeros(0)
    frame = cfg.substeps
    remaining = spend(min(cfg.drape_substeps, cfg.max_steps))
    while remaining > 0:
        n = min(frame, remaining)
        remaining -= n
        if run_substeps(state, cfg, n, shrunk.as_arrays(), stitch_rest=stitch0):
            break
    budget += remaining

    # 2) stitch ramp: pull seam rest lengths to zero
    for k in range(spend(cfg.stitch_substeps)):
        t = (k + 1) / cfg.stitch_substeps
        run_substeps(state, cfg, 1, shrunk.as_arrays(), stitch_rest=stitch0 * (1 - t), stop_on_settle=False)

    # 3) inflate radii back over a linear ramp; pins stay while the body is
    #    below full volume and ride the growing surface
    chunks = 10
    n_inf = spend(cfg.inflate_substeps)
    pins = pattern.pinned_vertices
    for k in range(chunks):
        t = (k + 1) / chunks
        factor = cfg.shrink_factor + t * (1.0 - cfg.shrink_factor)
        grown = shrink_to_skeleton(dressing_body, factor)
        if len(pins):
            sd = grown.sdf(state.positions[pins])
            inside = sd < cfg.collision_margin
            if np.any(inside):
                # push pins out horizontally only: the waistband keeps its
                # height while the body grows into it
                g = grown.sdf_gradient(state.positions[pins[inside]])
                g[:, 1] = 0.0
                nrm = np.linalg.norm(g, axis=1, keepdims=True)
                fallback = state.positions[pins[inside]] * np.array([1.0, 0.0, 1.0])
                fn = np.linalg.norm(fallback, axis=1, keepdims=True)
                g = np.where(nrm > 1e-6, g / np.maximum(nrm, 1e-12), fallback / np.maximum(fn, 1e-12))
                push = (cfg.collision_margin - sd[inside])[:, None]
                state.positions[pins[inside]] += push * g
        run_substeps(state, cfg, max(n_inf // chunks, 1), grown.as_arrays(), stop_on_settle=False)

    # Skirts keep the waistband attached (fitted waistband): a capsule body
    # with independently sampled waist/hip cannot reliably hold a released
    # ring. Shirts and kimonos hang on shoulder geometry once released.
    if gtype != GarmentType.SKIRT:
        state.inv_mass = inv_mass_full

    # 4) move to the target pose
    n_pose = spend(cfg.pose_substeps)
    theta0, theta1 = body.arm_angle, ARM_ANGLE[PoseSpec.TARGET]
    for k in range(chunks):
        t = (k + 1) / chunks
        posed = build_mannequin(body.body, PoseSpec.TARGET, arm_angle=theta0 + t * (theta1 - theta0))
        run_substeps(state, cfg, max(n_pose // chunks, 1), posed.as_arrays(), stop_on_settle=False)

    # 5) settle
    final = build_mannequin(body.body, PoseSpec.TARGET)
    settled = False
    remaining = spend(min(cfg.settle_substeps, max(budget, frame)))
    while remaining > 0:
        n = min(frame, remaining)
        if run_substeps(state, cfg, n, final.as_arrays()):
            settled = True
            break
        remaining -= n

    return DrapedMeshRaw(state.positions.copy(), pattern, gtype, settled, seed, final)


def _guess_gtype(pattern: PatternMesh) -> GarmentType:
    names = set(pattern.panel_names)
    if "sleeve_l" in names:
        return GarmentType.SHIRT
    if len(names & {"front", "back"}) == 2 and len(names) == 2:
        # skirt and kimono share panel names; kimono panels carry underarm seams
        labels = getattr(pattern, "_seam_labels", {})
        if any(k.endswith("underarm_r") for k in labels):
            return GarmentType.KIMONO
        return GarmentType.SKIRT
    raise ValueError("cannot infer garment type from panel names")


def check_penetration(mesh: DrapedMeshRaw | np.ndarray, body: Mannequin) -> float:
    """Max penetration depth (meters) of vertices into the body, >= 0."""
    pos = mesh.positions if isinstance(mesh, DrapedMeshRaw) else np.asarray(mesh)
    sd = body.sdf(pos)
    return float(np.maximum(-sd, 0.0).max(initial=0.0))
