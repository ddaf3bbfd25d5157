// Typed client for the trajectory engine's HTTP API. Every number shown in
// the UI comes from these payloads; nothing is recomputed client-side.

export interface PromptEntry {
  id: number;
  text: string;
}

export interface LatentStats {
  min: number;
  max: number;
  mean: number;
}

export interface FrameData {
  timestep: number;
  sigma: number;
  preview_png_base64: string;
  noise_previews_base64?: [string, string, string]; // prompt-specific, generic, final
  latent_stats: LatentStats;
}

export interface GenerateResponse {
  trajectory_id: string;
  cached: boolean;
}

export type SweepMap = Record<'0' | '1' | '7' | '20', string>;

export interface TrajectoryFileHead {
  id: string;
  token_ids: number[];
  token_length: number;
  final_image_png?: string;
  config: { prompt: string; seed: number; guidance_scale: number; num_steps: number };
}

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

async function getJson<T>(url: string): Promise<T> {
  const resp = await fetch(url);
  if (!resp.ok) throw new ApiError(resp.status, `${url} -> ${resp.status}`);
  return (await resp.json()) as T;
}

export function fetchPrompts(): Promise<PromptEntry[]> {
  return getJson('/api/prompts');
}

export async function postGenerate(body: {
  prompt_id: number;
  seed: number;
  guidance_scale: number;
}): Promise<GenerateResponse> {
  const resp = await fetch('/api/generate', {
    method: 'POST',
    headers: { 'content-type': 'application/json' },
    body: JSON.stringify(body),
  });
  if (!resp.ok) {
    let detail = `${resp.status}`;
    try {
      detail = ((await resp.json()) as { error?: string }).error ?? detail;
    } catch {
      // keep the bare status
    }
    throw new ApiError(resp.status, detail);
  }
  return (await resp.json()) as GenerateResponse;
}

export function fetchFrame(trajectoryId: string, timestep: number): Promise<FrameData> {
  return getJson(`/api/trajectories/${trajectoryId}/frames/${timestep}`);
}

export function fetchSweep(promptId: number, seed: number): Promise<SweepMap> {
  return getJson(`/api/guidance-sweep?prompt_id=${promptId}&seed=${seed}`);
}

export function fetchTrajectoryFile(trajectoryId: string): Promise<TrajectoryFileHead> {
  return getJson(`/api/trajectories/${trajectoryId}/file`);
}

export function pngDataUrl(base64: string): string {
  return `data:image/png;base64,${base64}`;
}
