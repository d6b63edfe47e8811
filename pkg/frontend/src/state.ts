import type {
  ClusterReport,
  ExcludeResponse,
  ExplainResponse,
  Explanation,
  ResetResponse,
  SteerReportJson,
} from "./types.js";

/** One entry in the exclusion list. The delta badges carry the accuracy
 * movement of the steering step that introduced the atom, split by split;
 * null when the step affected no instance of that split. */
export interface ExclusionBadge {
  id: number;
  display: string;
  affectedCounts: Record<string, number>;
  accuracyDelta: Record<string, number | null>;
}

export interface ConsoleState {
  sessionId: string | null;
  exclusionsVersion: number;
  selected: number | null;
  current: Explanation | null;
  /** Exclusion-list version the current explanation was computed under;
   * re-explaining the same instance under a different version is what
   * populates the before/after panel. */
  currentVersion: number | null;
  comparison: { before: Explanation | null; after: Explanation | null };
  clusterK: number;
  clusterReport: ClusterReport | null;
  selectedCluster: number | null;
  exclusions: ExclusionBadge[];
  lastReport: SteerReportJson | null;
}

export function initialState(): ConsoleState {
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
export function applyExplain(state: ConsoleState, resp: ExplainResponse): ConsoleState {
  const e = resp.explanation;
  const sameInstance = state.current !== null && state.current.instance_id === e.instance_id;
  const versionMoved =
    state.currentVersion !== null && resp.exclusions_version !== state.currentVersion;
  const comparison =
    sameInstance && versionMoved
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

function stepDelta(report: SteerReportJson): Record<string, number | null> {
  const delta: Record<string, number | null> = {};
  for (const split of Object.keys(report.affected_counts)) {
    const before = report.accuracy_before[split];
    const after = report.accuracy_after[split];
    delta[split] = before === null || after === null ? null : after - before;
  }
  return delta;
}

export function applyExclude(
  state: ConsoleState,
  resp: ExcludeResponse,
  displays: Map<number, string>,
): ConsoleState {
  const known = new Set(state.exclusions.map((b) => b.id));
  const added: ExclusionBadge[] = resp.report.excluded
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

export function applyReset(state: ConsoleState, resp: ResetResponse): ConsoleState {
  return {
    ...state,
    sessionId: resp.session_id,
    exclusionsVersion: resp.exclusions_version,
    exclusions: [],
    lastReport: null,
    comparison: { before: null, after: null },
  };
}

export function applyClusters(
  state: ConsoleState,
  k: number,
  report: ClusterReport,
): ConsoleState {
  const keep =
    state.selectedCluster !== null && state.selectedCluster < report.clusters.length;
  return {
    ...state,
    clusterK: k,
    clusterReport: report,
    selectedCluster: keep ? state.selectedCluster : null,
  };
}

export function selectCluster(state: ConsoleState, clusterId: number | null): ConsoleState {
  return { ...state, selectedCluster: clusterId };
}
