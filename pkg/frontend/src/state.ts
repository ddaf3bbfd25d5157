// View state machine. The expansion level is a five-state machine whose
// transitions mirror the explainer's click paths; everything else is plain
// hyperparameter state clamped to the engine's ranges.

export const NUM_TIMESTEPS = 50;
export const GUIDANCE_SCALES = [0, 1, 7, 20] as const;
export const SEED_PRESETS = [1, 2, 3] as const;
export const DEFAULT_GUIDANCE_SCALE = 7;
export const EXPANSION_ANIMATION_MS = 400;

export type Expansion = 'overview' | 'text_ops' | 'text_linkage' | 'image_ops' | 'guidance';

export interface ViewState {
  selectedPromptId: number;
  seed: number;
  guidanceScale: number;
  timestep: number; // 1..NUM_TIMESTEPS
  expansion: Expansion;
  playing: boolean;
}

export function initialState(): ViewState {
  return {
    selectedPromptId: 1,
    seed: 1,
    guidanceScale: DEFAULT_GUIDANCE_SCALE,
    timestep: NUM_TIMESTEPS,
    expansion: 'overview',
    playing: false,
  };
}

export function clampTimestep(t: number): number {
  return Math.min(NUM_TIMESTEPS, Math.max(1, Math.round(t)));
}

// legal expansion transitions: overview <-> text_ops <-> text_linkage,
// overview <-> image_ops <-> guidance
const TRANSITIONS: Record<Expansion, Expansion[]> = {
  overview: ['text_ops', 'image_ops'],
  text_ops: ['overview', 'text_linkage'],
  text_linkage: ['text_ops'],
  image_ops: ['overview', 'guidance'],
  guidance: ['image_ops'],
};

export function canExpand(from: Expansion, to: Expansion): boolean {
  return TRANSITIONS[from].includes(to);
}

export function expand(state: ViewState, to: Expansion): ViewState {
  if (!canExpand(state.expansion, to)) return state;
  return { ...state, expansion: to };
}

export function collapse(state: ViewState): ViewState {
  switch (state.expansion) {
    case 'text_linkage':
      return { ...state, expansion: 'text_ops' };
    case 'guidance':
      return { ...state, expansion: 'image_ops' };
    case 'text_ops':
    case 'image_ops':
      return { ...state, expansion: 'overview' };
    default:
      return state;
  }
}

export function setTimestep(state: ViewState, t: number): ViewState {
  return { ...state, timestep: clampTimestep(t) };
}

export function snapGuidanceScale(raw: number): number {
  let best: number = GUIDANCE_SCALES[0];
  for (const s of GUIDANCE_SCALES) {
    if (Math.abs(s - raw) < Math.abs(best - raw)) best = s;
  }
  return best;
}

/**
 * Single-flight request gate: issue() hands out a token, and only the holder
 * of the newest token may apply its response. Stale responses are discarded.
 */
export class RequestGate {
  private counter = 0;

  issue(): number {
    this.counter += 1;
    return this.counter;
  }

  isCurrent(token: number): boolean {
    return token === this.counter;
  }
}
