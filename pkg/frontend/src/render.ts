// Pure DOM construction: same (state, data) in, same tree out. No listeners
// are attached here; interactive elements carry data-action attributes that
// the controller interprets through event delegation.

import type { FrameData, PromptEntry, SweepMap } from './api';
import { pngDataUrl } from './api';
import type { ViewState } from './state';
import { GUIDANCE_SCALES, NUM_TIMESTEPS, SEED_PRESETS } from './state';

export interface AppData {
  prompts: PromptEntry[] | null;
  trajectoryId: string | null;
  frames: Record<number, FrameData>;
  tokenIds: number[] | null;
  tokenLength: number | null;
  finalImagePng: string | null;
  sweep: SweepMap | null;
  sweepFrames: Record<string, FrameData>; // keyed by scale label, at current timestep
  loading: boolean;
  error: string | null;
}

export function emptyData(): AppData {
  return {
    prompts: null,
    trajectoryId: null,
    frames: {},
    tokenIds: null,
    tokenLength: null,
    finalImagePng: null,
    sweep: null,
    sweepFrames: {},
    loading: false,
    error: null,
  };
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  children: (Node | string)[] = [],
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  for (const child of children) node.append(child);
  return node;
}

function previewImg(frame: FrameData | undefined, role: string, label: string): HTMLElement {
  if (!frame) {
    return el('div', { class: 'preview placeholder', 'data-role': role }, [label]);
  }
  return el('img', {
    class: 'preview',
    'data-role': role,
    alt: label,
    src: pngDataUrl(frame.preview_png_base64),
  });
}

function renderPromptSelector(state: ViewState, data: AppData): HTMLElement {
  const options = (data.prompts ?? []).map((p) =>
    el('option', { value: String(p.id), ...(p.id === state.selectedPromptId ? { selected: '' } : {}) }, [p.text]),
  );
  return el('label', { class: 'control prompt-selector' }, [
    'Prompt',
    el('select', { 'data-action': 'select-prompt', 'data-role': 'prompt-select' }, options),
  ]);
}

function renderSeedControl(state: ViewState): HTMLElement {
  const presets = SEED_PRESETS.map((s) =>
    el(
      'button',
      {
        'data-action': 'seed-preset',
        'data-value': String(s),
        class: s === state.seed ? 'seed-preset active' : 'seed-preset',
      },
      [String(s)],
    ),
  );
  return el('div', { class: 'control seed-control' }, [
    'Seed',
    ...presets,
    el('input', {
      type: 'number',
      min: '0',
      value: String(state.seed),
      'data-action': 'seed-input',
      'data-role': 'seed-input',
    }),
  ]);
}

function renderScaleControl(state: ViewState): HTMLElement {
  return el('label', { class: 'control scale-control' }, [
    'Guidance scale',
    el('input', {
      type: 'number',
      min: '0',
      max: '20',
      step: '0.5',
      value: String(state.guidanceScale),
      'data-action': 'scale-input',
      'data-role': 'scale-input',
    }),
  ]);
}

export function renderTimestepController(state: ViewState, data: AppData): HTMLElement {
  const frame = data.frames[state.timestep];
  return el('div', { class: 'timestep-controller', 'data-role': 'timestep-controller' }, [
    el('button', { 'data-action': 'play-toggle', 'data-role': 'play-toggle' }, [
      state.playing ? 'Pause' : 'Play',
    ]),
    el('input', {
      type: 'range',
      min: '1',
      max: String(NUM_TIMESTEPS),
      value: String(state.timestep),
      'data-action': 'scrub',
      'data-role': 'timestep-slider',
    }),
    el('span', { 'data-role': 'timestep-label' }, [`timestep ${state.timestep} / ${NUM_TIMESTEPS}`]),
    el('span', { 'data-role': 'sigma-label' }, [
      frame ? `sigma ${frame.sigma}` : 'sigma …',
    ]),
  ]);
}

function tokenHue(id: number): number {
  // presentation-only color hash; engine numbers are never derived client-side
  return (id * 137) % 360;
}

export function renderTextOps(data: AppData): HTMLElement {
  const chips: HTMLElement[] = [];
  if (data.tokenIds && data.tokenLength !== null) {
    // content tokens sit between bos and eos
    for (let i = 1; i < data.tokenLength - 1; i++) {
      const id = data.tokenIds[i];
      chips.push(
        el('span', { class: 'token-chip', 'data-role': 'token-chip' }, [
          el('span', {
            class: 'token-glyph',
            style: `background:hsl(${tokenHue(id)},70%,60%)`,
          }),
          el('span', { class: 'token-id' }, [String(id)]),
        ]),
      );
    }
  }
  return el('section', { class: 'panel text-ops', 'data-role': 'text-ops' }, [
    el('h2', {}, ['Text Operation View']),
    el('p', {}, ['The prompt is split into tokens, each mapped to an id and then to a vector.']),
    el('div', { class: 'token-row', 'data-role': 'token-row' }, chips),
    el('button', { 'data-action': 'expand-linkage' }, ['How text links to images']),
    el('button', { 'data-action': 'collapse' }, ['Back to overview']),
  ]);
}

export function renderTextLinkage(): HTMLElement {
  return el('section', { class: 'panel text-linkage', 'data-role': 'text-linkage' }, [
    el('h2', {}, ['Text-image Linkage Explanation']),
    el('p', {}, [
      'The text encoder was trained contrastively against an image encoder: ' +
        'matching text-image pairs are pulled together in a shared vector space, ' +
        'mismatched pairs pushed apart. Text vectors therefore carry image-related ' +
        'information, which is what lets them steer the refiner.',
    ]),
    el('button', { 'data-action': 'collapse' }, ['Back to tokens']),
  ]);
}

export function renderImageOps(state: ViewState, data: AppData): HTMLElement {
  const frame = data.frames[state.timestep];
  const noiseLabels = ['prompt-specific noise', 'generic noise', 'final weighted noise'];
  const noiseCells: HTMLElement[] = [];
  if (frame?.noise_previews_base64) {
    frame.noise_previews_base64.forEach((b64, i) => {
      noiseCells.push(
        el('figure', { class: 'noise-cell' }, [
          el('img', { 'data-role': `noise-preview-${i}`, alt: noiseLabels[i], src: pngDataUrl(b64) }),
          el('figcaption', {}, [noiseLabels[i]]),
        ]),
      );
    });
  } else {
    noiseCells.push(el('p', { 'data-role': 'initial-noise-note' }, ['Pure initial noise: nothing predicted yet.']));
  }
  return el('section', { class: 'panel image-ops', 'data-role': 'image-ops' }, [
    el('h2', {}, ['Image Operation View']),
    el('p', {}, ['Each step the UNet predicts the noise in the latent; the scheduler removes it.']),
    previewImg(frame, 'latent-preview', 'latent preview'),
    el('div', { class: 'noise-row' }, noiseCells),
    el('p', { class: 'guidance-note' }, [
      'The final noise blends the generic and prompt-specific predictions, weighted by the guidance scale. ',
      el('button', { 'data-action': 'expand-guidance' }, ['Interactive Guidance Explanation']),
    ]),
    el('button', { 'data-action': 'collapse' }, ['Back to overview']),
  ]);
}

export function renderGuidancePanel(state: ViewState, data: AppData): HTMLElement {
  const columns = GUIDANCE_SCALES.map((scale) => {
    const key = String(scale);
    const frame = data.sweepFrames[key];
    return el('figure', { class: scale === state.guidanceScale ? 'sweep-col active' : 'sweep-col' }, [
      previewImg(frame, `sweep-preview-${key}`, `scale ${key}`),
      el('figcaption', { 'data-role': 'sweep-label' }, [`scale ${key}`]),
    ]);
  });
  return el('section', { class: 'panel guidance', 'data-role': 'guidance-panel' }, [
    el('h2', {}, ['Interactive Guidance Explanation']),
    el('p', {}, [
      'Four generations share this seed and differ only in guidance scale: ' +
        'higher values follow the prompt more strongly, at the cost of exaggeration.',
    ]),
    el('div', { class: 'sweep-row' }, columns),
    el('input', {
      type: 'range',
      min: '0',
      max: '20',
      step: '1',
      value: String(state.guidanceScale),
      'data-action': 'guidance-slider',
      'data-role': 'guidance-slider',
    }),
    el('span', { 'data-role': 'guidance-slider-label' }, [`comparing at scale ${state.guidanceScale}`]),
    el('button', { 'data-action': 'collapse' }, ['Back to image view']),
  ]);
}

export function renderOverview(state: ViewState, data: AppData): HTMLElement {
  const frame = data.frames[state.timestep];
  return el('section', { class: 'panel overview', 'data-role': 'overview' }, [
    el('div', { class: 'blocks' }, [
      el('button', { class: 'block', 'data-action': 'expand-text', 'data-role': 'text-block' }, [
        el('h3', {}, ['Text Representation Generator']),
        el('p', {}, ['prompt → tokens → text vectors']),
      ]),
      el('button', { class: 'block', 'data-action': 'expand-image', 'data-role': 'image-block' }, [
        el('h3', {}, ['Image Representation Refiner']),
        el('p', {}, ['noise → predicted noise removed, step by step']),
      ]),
    ]),
    el('div', { class: 'stage-previews' }, [
      previewImg(frame, 'frame-preview', 'current frame'),
      data.finalImagePng
        ? el('img', { 'data-role': 'final-image', alt: 'final image', src: pngDataUrl(data.finalImagePng) })
        : el('div', { class: 'preview placeholder', 'data-role': 'final-image' }, ['final image']),
    ]),
  ]);
}

export function renderApp(state: ViewState, data: AppData): HTMLElement {
  let stage: HTMLElement;
  switch (state.expansion) {
    case 'text_ops':
      stage = renderTextOps(data);
      break;
    case 'text_linkage':
      stage = renderTextLinkage();
      break;
    case 'image_ops':
      stage = renderImageOps(state, data);
      break;
    case 'guidance':
      stage = renderGuidancePanel(state, data);
      break;
    default:
      stage = renderOverview(state, data);
  }
  const children: (Node | string)[] = [
    el('header', { class: 'controls' }, [
      renderPromptSelector(state, data),
      renderSeedControl(state),
      renderScaleControl(state),
    ]),
  ];
  if (data.error) {
    children.push(
      el('div', { class: 'error-banner', 'data-role': 'error-banner' }, [
        data.error,
        el('button', { 'data-action': 'retry' }, ['Retry']),
      ]),
    );
  }
  children.push(
    el('main', { class: `stage expansion-${state.expansion}`, 'data-expansion': state.expansion }, [stage]),
    renderTimestepController(state, data),
    el('footer', { class: 'status' }, [data.loading ? 'working…' : 'ready']),
  );
  return el('div', { class: 'app' }, children);
}
