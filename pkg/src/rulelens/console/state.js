export function initialState() {
    return {
        sessionId: null,
        exclusionsVersion: 0,
        selected: null,
        current: null,
        currentVersion: null,
        comparison: { before: null, after: null },
        clusterK: 10,
        clusterReport: null,
        selectedCluster: null,
        exclusions: [],
        lastReport: null,
    };
}
/** Fold an explain response into the state. Re-explaining the instance the
 * console already shows, after the exclusion list moved, shifts the previous
 * explanation into the before/after panel; switching instances clears it. */
export function applyExplain(state, resp) {
    const e = resp.explanation;
    const sameInstance = state.current !== null && state.current.instance_id === e.instance_id;
    const versionMoved = state.currentVersion !== null && resp.exclusions_version !== state.currentVersion;
    const comparison = sameInstance && versionMoved
        ? { before: state.current, after: e }
        : sameInstance
            ? state.comparison
            : { before: null, after: null };
    return {
        ...state,
        sessionId: resp.session_id ?? state.sessionId,
        exclusionsVersion: resp.exclusions_version,
        selected: e.instance_id,
        current: e,
        currentVersion: resp.exclusions_version,
        comparison,
    };
}
function stepDelta(report) {
    const delta = {};
    for (const split of Object.keys(report.affected_counts)) {
        const before = report.accuracy_before[split];
        const after = report.accuracy_after[split];
        delta[split] = before === null || after === null ? null : after - before;
    }
    return delta;
}
export function applyExclude(state, resp, displays) {
    const known = new Set(state.exclusions.map((b) => b.id));
    const added = resp.report.excluded
        .filter((id) => !known.has(id))
        .map((id) => ({
        id,
        display: displays.get(id) ?? `#${id}`,
        affectedCounts: resp.report.affected_counts,
        accuracyDelta: stepDelta(resp.report),
    }));
    return {
        ...state,
        sessionId: resp.session_id,
        exclusionsVersion: resp.exclusions_version,
        exclusions: [...state.exclusions, ...added],
        lastReport: resp.report,
    };
}
export function applyReset(state, resp) {
    return {
        ...state,
        sessionId: resp.session_id,
        exclusionsVersion: resp.exclusions_version,
        exclusions: [],
        lastReport: null,
        comparison: { before: null, after: null },
    };
}
export function applyClusters(state, k, report) {
    const keep = state.selectedCluster !== null && state.selectedCluster < report.clusters.length;
    return {
        ...state,
        clusterK: k,
        clusterReport: report,
        selectedCluster: keep ? state.selectedCluster : null,
    };
}
export function selectCluster(state, clusterId) {
    return { ...state, selectedCluster: clusterId };
}
