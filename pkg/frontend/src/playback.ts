// Full-playback gate for one clip. A clip counts as heard only when an
// 'ended' event arrives for a pass that was not skipped through; seeking
// ahead invalidates the current pass and the rater has to play it again.

export interface AudioLike {
  currentTime: number;
  addEventListener(type: string, listener: () => void): void;
}

export class ClipGate {
  completed = false;
  private skipped = false;

  constructor(audio: AudioLike, onComplete: () => void) {
    audio.addEventListener('seeked', () => {
      this.skipped = true;
    });
    audio.addEventListener('play', () => {
      if (audio.currentTime === 0) {
        this.skipped = false;
      }
    });
    audio.addEventListener('ended', () => {
      if (this.skipped) {
        this.skipped = false;
        return;
      }
      if (!this.completed) {
        this.completed = true;
        onComplete();
      }
    });
  }
}
