// Session state machine: demographics -> 25 trials -> description -> done.
// The server log is authoritative; this controller never stores judgments
// and relies on GET next being idempotent to survive lost acknowledgements.

import { CollectApi, RaterProfile, SessionInfo, Side, Trial, isSessionComplete } from './api.js';

export type Phase = 'idle' | 'trial' | 'description' | 'done';

export class SessionController {
  phase: Phase = 'idle';
  session: SessionInfo | null = null;
  trial: Trial | null = null;
  playedLeft = false;
  playedRight = false;
  selection: Side | null = null;
  submitting = false;
  error: string | null = null;

  constructor(private api: CollectApi, private onChange: () => void = () => {}) {}

  private emit(): void {
    this.onChange();
  }

  async start(profile: RaterProfile): Promise<void> {
    this.session = await this.api.createSession(profile);
    await this.loadNext();
  }

  /** Rejoin an existing session; the server cursor decides where we are. */
  async resume(sessionId: string): Promise<void> {
    this.session = { session_id: sessionId, rater_id: '', session_size: 0 };
    await this.loadNext();
  }

  private adopt(trial: Trial): void {
    this.trial = trial;
    this.playedLeft = false;
    this.playedRight = false;
    this.selection = null;
    this.error = null;
    this.phase = 'trial';
  }

  private async loadNext(): Promise<void> {
    if (!this.session) throw new Error('no active session');
    try {
      this.adopt(await this.api.nextTrial(this.session.session_id));
    } catch (err) {
      if (!isSessionComplete(err)) throw err;
      this.trial = null;
      this.phase = 'description';
    }
    this.emit();
  }

  markPlayed(side: Side): void {
    if (this.phase !== 'trial') return;
    if (side === 'left') this.playedLeft = true;
    else this.playedRight = true;
    this.emit();
  }

  select(side: Side): void {
    if (this.phase !== 'trial' || this.submitting) return;
    this.selection = side;
    this.emit();
  }

  canSubmit(): boolean {
    return (
      this.phase === 'trial' &&
      this.playedLeft &&
      this.playedRight &&
      this.selection !== null &&
      !this.submitting
    );
  }

  /**
   * Submit the current choice. On a transport failure the server may or may
   * not have recorded the judgment, so we reconcile against GET next before
   * surfacing a retry prompt; a retry is just submit() again with the
   * selection and played flags untouched.
   */
  async submit(): Promise<void> {
    if (!this.canSubmit() || !this.session || !this.trial) return;
    const sessionId = this.session.session_id;
    const pairId = this.trial.pair_id;
    const side = this.selection as Side;
    this.submitting = true;
    this.error = null;
    this.emit();
    try {
      const ack = await this.api.submitJudgment(sessionId, pairId, side);
      this.submitting = false;
      if (ack.session_status === 'complete') {
        this.trial = null;
        this.phase = 'description';
        this.emit();
      } else {
        await this.loadNext();
      }
    } catch (err) {
      this.submitting = false;
      const landed = await this.reconcile(pairId);
      if (!landed) {
        this.error = err instanceof Error ? err.message : String(err);
        this.emit();
      }
    }
  }

  /** True when the failed submit actually reached the server. */
  private async reconcile(pairId: string): Promise<boolean> {
    if (!this.session) return false;
    try {
      const next = await this.api.nextTrial(this.session.session_id);
      if (next.pair_id !== pairId) {
        this.adopt(next);
        this.emit();
        return true;
      }
      return false;
    } catch (err) {
      if (isSessionComplete(err)) {
        this.trial = null;
        this.phase = 'description';
        this.emit();
        return true;
      }
      return false;
    }
  }

  async submitDescription(text: string): Promise<void> {
    if (this.phase !== 'description' || !this.session) return;
    this.error = null;
    try {
      await this.api.submitDescription(this.session.session_id, text);
      this.phase = 'done';
    } catch (err) {
      this.error = err instanceof Error ? err.message : String(err);
    }
    this.emit();
  }
}
