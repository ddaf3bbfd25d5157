import './style.css';
import {
  ApiError,
  fetchFrame,
  fetchPrompts,
  fetchSweep,
  fetchTrajectoryFile,
  postGenerate,
} from './api';
import type { AppData } from './render';
import { emptyData, renderApp } from './render';
import type { Expansion, ViewState } from './state';
import {
  GUIDANCE_SCALES,
  NUM_TIMESTEPS,
  RequestGate,
  collapse,
  expand,
  initialState,
  setTimestep,
  snapGuidanceScale,
} from './state';

const PLAYBACK_INTERVAL_MS = 250;

export class App {
  state: ViewState = initialState();
  data: AppData = emptyData();
  private gate = new RequestGate();
  private playTimer: ReturnType<typeof setInterval> | null = null;

  constructor(private root: HTMLElement) {
    root.addEventListener('click', (ev) => this.delegate(ev, 'click'));
    root.addEventListener('change', (ev) => this.delegate(ev, 'change'));
    root.addEventListener('input', (ev) => this.delegate(ev, 'input'));
  }

  render(): void {
    this.root.replaceChildren(renderApp(this.state, this.data));
  }

  async boot(): Promise<void> {
    this.data.loading = true;
    this.render();
    try {
      this.data.prompts = await fetchPrompts();
    } catch (err) {
      this.fail(err);
      return;
    }
    await this.regenerate();
  }

  private fail(err: unknown): void {
    this.data.loading = false;
    this.data.error = err instanceof ApiError ? `engine error: ${err.message}` : String(err);
    this.render();
  }

  /** One generate in flight at a time; stale responses are discarded. */
  async regenerate(): Promise<void> {
    const token = this.gate.issue();
    this.stopPlayback();
    this.data.loading = true;
    this.data.error = null;
    this.render();
    try {
      const resp = await postGenerate({
        prompt_id: this.state.selectedPromptId,
        seed: this.state.seed,
        guidance_scale: this.state.guidanceScale,
      });
      if (!this.gate.isCurrent(token)) return;
      this.data.trajectoryId = resp.trajectory_id;
      this.data.frames = {};
      this.data.sweep = null;
      this.data.sweepFrames = {};
      this.state = setTimestep(this.state, NUM_TIMESTEPS);

      const file = await fetchTrajectoryFile(resp.trajectory_id);
      if (!this.gate.isCurrent(token)) return;
      this.data.tokenIds = file.token_ids;
      this.data.tokenLength = file.token_length;
      this.data.finalImagePng = file.final_image_png ?? null;

      await this.ensureFrame(this.state.timestep);
      if (!this.gate.isCurrent(token)) return;
      if (this.state.expansion === 'guidance') await this.ensureSweep();
      this.data.loading = false;
      this.render();
    } catch (err) {
      if (this.gate.isCurrent(token)) this.fail(err);
    }
  }

  async ensureFrame(t: number): Promise<void> {
    if (!this.data.trajectoryId || this.data.frames[t]) return;
    this.data.frames[t] = await fetchFrame(this.data.trajectoryId, t);
  }

  async ensureSweep(): Promise<void> {
    if (!this.data.sweep) {
      this.data.sweep = await fetchSweep(this.state.selectedPromptId, this.state.seed);
    }
    const sweep = this.data.sweep;
    const t = this.state.timestep;
    for (const scale of GUIDANCE_SCALES) {
      const id = sweep[String(scale) as keyof typeof sweep];
      this.data.sweepFrames[String(scale)] = await fetchFrame(id, t);
    }
  }

  private async onScrub(t: number): Promise<void> {
    this.state = setTimestep(this.state, t);
    try {
      await this.ensureFrame(this.state.timestep);
      if (this.state.expansion === 'guidance') await this.ensureSweep0();
    } catch (err) {
      this.fail(err);
      return;
    }
    this.render();
  }

  private async ensureSweep0(): Promise<void> {
    this.data.sweepFrames = {};
    await this.ensureSweep();
  }

  private startPlayback(): void {
    if (this.state.timestep >= NUM_TIMESTEPS) {
      this.state = setTimestep(this.state, 1);
    }
    this.state = { ...this.state, playing: true };
    this.playTimer = setInterval(() => void this.playStep(), PLAYBACK_INTERVAL_MS);
    void this.onScrub(this.state.timestep);
  }

  private async playStep(): Promise<void> {
    if (this.state.timestep >= NUM_TIMESTEPS) {
      this.stopPlayback();
      this.render();
      return;
    }
    await this.onScrub(this.state.timestep + 1);
    if (this.state.timestep >= NUM_TIMESTEPS) {
      this.stopPlayback();
      this.render();
    }
  }

  private stopPlayback(): void {
    if (this.playTimer !== null) {
      clearInterval(this.playTimer);
      this.playTimer = null;
    }
    if (this.state.playing) this.state = { ...this.state, playing: false };
  }

  private expandTo(target: Expansion): void {
    const next = expand(this.state, target);
    if (next === this.state) return;
    this.state = next;
    if (target === 'guidance') {
      void (async () => {
        try {
          await this.ensureSweep();
        } catch (err) {
          this.fail(err);
          return;
        }
        this.render();
      })();
    }
    this.render();
  }

  private delegate(ev: Event, kind: 'click' | 'change' | 'input'): void {
    const target = (ev.target as HTMLElement | null)?.closest<HTMLElement>('[data-action]');
    if (!target) return;
    const action = target.dataset.action!;
    if (kind === 'click') {
      switch (action) {
        case 'seed-preset':
          this.state = { ...this.state, seed: Number(target.dataset.value) };
          void this.regenerate();
          return;
        case 'play-toggle':
          if (this.state.playing) {
            this.stopPlayback();
            this.render();
          } else {
            this.startPlayback();
          }
          return;
        case 'expand-text':
          this.expandTo('text_ops');
          return;
        case 'expand-image':
          this.expandTo('image_ops');
          return;
        case 'expand-linkage':
          this.expandTo('text_linkage');
          return;
        case 'expand-guidance':
          this.expandTo('guidance');
          return;
        case 'collapse':
          this.state = collapse(this.state);
          this.render();
          return;
        case 'retry':
          this.data.error = null;
          if (!this.data.prompts) void this.boot();
          else void this.regenerate();
          return;
      }
    }
    if (kind === 'change') {
      const input = target as HTMLInputElement | HTMLSelectElement;
      switch (action) {
        case 'select-prompt':
          this.state = { ...this.state, selectedPromptId: Number(input.value) };
          void this.regenerate();
          return;
        case 'seed-input': {
          const seed = Math.max(0, Math.floor(Number(input.value) || 0));
          this.state = { ...this.state, seed };
          void this.regenerate();
          return;
        }
        case 'scale-input': {
          const scale = Math.min(20, Math.max(0, Number(input.value) || 0));
          this.state = { ...this.state, guidanceScale: scale };
          void this.regenerate();
          return;
        }
      }
    }
    if (kind === 'input') {
      const input = target as HTMLInputElement;
      switch (action) {
        case 'scrub':
          void this.onScrub(Number(input.value));
          return;
        case 'guidance-slider': {
          const snapped = snapGuidanceScale(Number(input.value));
          if (snapped !== this.state.guidanceScale) {
            this.state = { ...this.state, guidanceScale: snapped };
            void this.regenerate();
          } else {
            this.render();
          }
          return;
        }
      }
    }
  }
}

declare global {
  interface Window {
    __diffuscopeApp?: App;
  }
}

const mount = document.getElementById('app');
if (mount) {
  const app = new App(mount);
  window.__diffuscopeApp = app;
  void app.boot();
}
